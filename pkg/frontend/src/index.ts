/**
 * Read-only bindings over the engine's on-disk artifacts.
 *
 * An IndexHandle opens an index file and an encoder checkpoint, then serves
 * searches entirely in-process: results match the engine CLI on the same
 * inputs (identical ids and order; scores agree to 1e-6). The handle is
 * immutable after open, so concurrent reads are safe.
 */

import { readFileSync } from "node:fs";

import { searchText, type SearchHit, type SearchParams } from "./engine.js";
import { IoError, UsageError } from "./errors.js";
import { parseEncoder, parseIndex, type EncoderParams, type ParsedIndex } from "./formats.js";

export { BiphaseError, ChecksumError, FormatError, IoError, TruncatedError, UsageError, VersionMismatchError } from "./errors.js";
export type { SearchHit, SearchParams } from "./engine.js";

export const version = "0.1.0";

export interface IndexStats {
  docCount: number;
  topicPostings: number;
  termPostings: number;
  topicLists: number;
  termLists: number;
  vocabSize: number;
  copiesPerDoc: number;
  pq: { m: number; k: number; dim: number };
}

function readArtifact(path: string): Buffer {
  try {
    return readFileSync(path);
  } catch (err) {
    throw new IoError(`cannot read ${path}: ${(err as Error).message}`);
  }
}

export class IndexHandle {
  private index: ParsedIndex | null;
  private encoder: EncoderParams | null;

  private constructor(index: ParsedIndex, encoder: EncoderParams) {
    this.index = index;
    this.encoder = encoder;
  }

  static open(indexPath: string, encoderPath: string): IndexHandle {
    const index = parseIndex(readArtifact(indexPath), indexPath);
    const encoder = parseEncoder(readArtifact(encoderPath), encoderPath);
    if (
      encoder.vocabSize !== index.config.vocabSize ||
      encoder.dim !== index.config.dim ||
      encoder.nTopics !== index.config.nTopics
    ) {
      throw new UsageError("encoder checkpoint does not match the index config");
    }
    return new IndexHandle(index, encoder);
  }

  private live(): { index: ParsedIndex; encoder: EncoderParams } {
    if (this.index === null || this.encoder === null) {
      throw new UsageError("handle is closed");
    }
    return { index: this.index, encoder: this.encoder };
  }

  search(text: string, params?: SearchParams): SearchHit[] {
    const { index, encoder } = this.live();
    return searchText(index, encoder, text, params).ranked;
  }

  searchBatch(texts: string[], params?: SearchParams): SearchHit[][] {
    return texts.map((text) => this.search(text, params));
  }

  stats(): IndexStats {
    const { index } = this.live();
    let topicPostings = 0;
    for (const list of index.topicLists) topicPostings += list.docIds.length;
    let termPostings = 0;
    for (const list of index.termLists.values()) termPostings += list.docIds.length;
    const docCount = index.codeDocIds.length;
    return {
      docCount,
      topicPostings,
      termPostings,
      topicLists: index.topicLists.length,
      termLists: index.termLists.size,
      vocabSize: index.config.vocabSize,
      copiesPerDoc: docCount ? (topicPostings + termPostings) / docCount : 0,
      pq: { m: index.codebook.m, k: index.codebook.k, dim: index.codebook.dim },
    };
  }

  close(): void {
    this.index = null;
    this.encoder = null;
  }
}
