import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import {
  ChecksumError,
  FormatError,
  IndexHandle,
  IoError,
  UsageError,
  VersionMismatchError,
} from "../src/index.js";
import { FIXTURE_DIR, ensureFixture, type Fixture } from "./fixtures.js";

let fixture: Fixture;

beforeAll(() => {
  fixture = ensureFixture();
}, 120_000);

describe("artifact validation", () => {
  it("missing files raise io errors", () => {
    expect(() => IndexHandle.open("/nonexistent.bpix", fixture.encoderPath)).toThrow(IoError);
    expect(() => IndexHandle.open(fixture.indexPath, "/nonexistent.bin")).toThrow(IoError);
  });

  it("a corrupted byte raises a checksum error", () => {
    const data = Buffer.from(readFileSync(fixture.indexPath));
    data[Math.floor(data.length / 2)] ^= 0xff;
    const path = join(FIXTURE_DIR, "corrupt.bpix");
    writeFileSync(path, data);
    expect(() => IndexHandle.open(path, fixture.encoderPath)).toThrow(ChecksumError);
  });

  it("a truncated file raises a format error", () => {
    const data = readFileSync(fixture.indexPath);
    const path = join(FIXTURE_DIR, "short.bpix");
    writeFileSync(path, data.subarray(0, data.length - 16));
    expect(() => IndexHandle.open(path, fixture.encoderPath)).toThrow(FormatError);
  });

  it("a version bump raises a version error", () => {
    const data = Buffer.from(readFileSync(fixture.indexPath));
    data.writeUInt32LE(99, 4);
    const path = join(FIXTURE_DIR, "newver.bpix");
    writeFileSync(path, data);
    expect(() => IndexHandle.open(path, fixture.encoderPath)).toThrow(VersionMismatchError);
  });

  it("bad magic raises a format error", () => {
    const path = join(FIXTURE_DIR, "junk.bpix");
    writeFileSync(path, Buffer.from("JUNKJUNKJUNKJUNKJUNK"));
    expect(() => IndexHandle.open(path, fixture.encoderPath)).toThrow(FormatError);
  });

  it("a closed handle refuses to search", () => {
    const handle = IndexHandle.open(fixture.indexPath, fixture.encoderPath);
    handle.close();
    expect(() => handle.search("anything")).toThrow(UsageError);
  });

  it("mismatched encoder is rejected", () => {
    // the codebook file is a valid binary but not an encoder checkpoint
    expect(() =>
      IndexHandle.open(fixture.indexPath, join(FIXTURE_DIR, "codebook.bin"))
    ).toThrow(FormatError);
  });
});
