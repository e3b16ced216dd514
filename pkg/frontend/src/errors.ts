/** Errors carry the engine's machine-parsable error class. */

export class BiphaseError extends Error {
  readonly errorClass: string = "internal";
}

export class IoError extends BiphaseError {
  override readonly errorClass = "io";
}

export class FormatError extends BiphaseError {
  override readonly errorClass = "format";
}

export class TruncatedError extends FormatError {}

export class VersionMismatchError extends BiphaseError {
  override readonly errorClass = "version";
}

export class ChecksumError extends BiphaseError {
  override readonly errorClass = "corrupt";
}

export class UsageError extends BiphaseError {
  override readonly errorClass = "config";
}
