import { BinaryReader, crc32c } from "./binary.js";
import { ChecksumError, FormatError, TruncatedError, VersionMismatchError } from "./errors.js";

export interface IndexFileConfig {
  kTopic: number;
  kTerm: number;
  nTopics: number;
  vocabSize: number;
  m: number;
  k: number;
  dim: number;
  maxDocTokens: number;
  maxQueryTokens: number;
}

export interface Vocabulary {
  tokens: string[];
  tokenToId: Map<string, number>;
  stopFlags: Uint8Array;
}

export interface PostingList {
  docIds: Uint32Array;
  weights: Float64Array; // stored as f32, widened exactly
}

export interface Codebook {
  m: number;
  k: number;
  dim: number;
  subDim: number;
  /** row-major (m, k, subDim), widened to f64 */
  centroids: Float64Array;
}

export interface ParsedIndex {
  config: IndexFileConfig;
  vocab: Vocabulary;
  topicLists: PostingList[];
  termLists: Map<number, PostingList>;
  codebook: Codebook;
  codeDocIds: Uint32Array;
  codes: Uint8Array; // (n, m) row-major
}

export interface EncoderParams {
  vocabSize: number;
  dim: number;
  nTopics: number;
  tokenEmb: Float64Array; // (W, d)
  seqProj: Float64Array; // (d, d)
  topics: Float64Array; // (M, d)
  topicBias: Float64Array; // (M,)
  mlpW1: Float64Array; // (d, d)
  mlpB1: Float64Array; // (d,)
  mlpW2: Float64Array; // (d,)
  mlpB2: number;
}

const INDEX_MAGIC = "BPIX";
const INDEX_VERSION = 1;
const ENCODER_MAGIC = "BPE1";

export function parseIndex(data: Buffer, source: string): ParsedIndex {
  if (data.length < 16) {
    throw new TruncatedError(`${source}: too short to be an index file`);
  }
  if (data.toString("latin1", 0, 4) !== INDEX_MAGIC) {
    throw new FormatError(`${source}: bad magic`);
  }
  const version = data.readUInt32LE(4);
  if (version !== INDEX_VERSION) {
    throw new VersionMismatchError(
      `${source}: index version ${version}, expected ${INDEX_VERSION}`
    );
  }
  const total = Number(data.readBigUInt64LE(8));
  if (data.length < total) {
    throw new TruncatedError(`${source}: expected ${total} bytes, found ${data.length}`);
  }
  if (data.length > total) {
    throw new FormatError(`${source}: ${data.length - total} trailing bytes`);
  }
  const stored = data.readUInt32LE(data.length - 4);
  if (crc32c(data.subarray(0, data.length - 4)) !== stored) {
    throw new ChecksumError(`${source}: checksum mismatch`);
  }

  const body = new BinaryReader(data.subarray(16, data.length - 4));
  const config: IndexFileConfig = {
    kTopic: body.u32("config"),
    kTerm: body.u32("config"),
    nTopics: body.u32("config"),
    vocabSize: body.u32("config"),
    m: body.u32("config"),
    k: body.u32("config"),
    dim: body.u32("config"),
    maxDocTokens: body.u32("config"),
    maxQueryTokens: body.u32("config"),
  };

  const tokens: string[] = [];
  const stopFlags = new Uint8Array(config.vocabSize);
  const tokenToId = new Map<string, number>();
  for (let i = 0; i < config.vocabSize; i++) {
    const len = body.u16("token length");
    const token = body.bytes(len, "token").toString("utf-8");
    stopFlags[i] = body.u8("stopword flag");
    tokens.push(token);
    tokenToId.set(token, i);
  }

  const readList = (): [number, PostingList] => {
    const entryId = body.u32("entry id");
    const length = body.u32("posting length");
    const docIds = body.u32Array(length, "posting doc ids");
    const weights = body.f32Array(length, "posting weights");
    return [entryId, { docIds, weights }];
  };

  const nTopicLists = body.u32("topic list count");
  if (nTopicLists !== config.nTopics) {
    throw new FormatError(`${source}: topic section holds ${nTopicLists} lists`);
  }
  const topicLists: PostingList[] = new Array(config.nTopics);
  for (let i = 0; i < nTopicLists; i++) {
    const [entryId, list] = readList();
    if (entryId >= config.nTopics) {
      throw new FormatError(`${source}: topic entry id ${entryId} out of range`);
    }
    topicLists[entryId] = list;
  }
  const nTermLists = body.u32("term list count");
  const termLists = new Map<number, PostingList>();
  for (let i = 0; i < nTermLists; i++) {
    const [entryId, list] = readList();
    if (entryId >= config.vocabSize) {
      throw new FormatError(`${source}: term entry id ${entryId} out of range`);
    }
    termLists.set(entryId, list);
  }

  const m = body.u32("codebook m");
  const k = body.u32("codebook k");
  const dim = body.u32("codebook dim");
  if (m === 0 || dim % m !== 0) {
    throw new FormatError(`${source}: codebook header has m=${m}, dim=${dim}`);
  }
  const subDim = dim / m;
  const centroids = body.f32Array(m * k * subDim, "centroids");
  const nDocs = body.u64("doc count");
  const codeDocIds = body.u32Array(nDocs, "code doc ids");
  const codes = new Uint8Array(body.bytes(nDocs * m, "codes"));
  if (body.remaining > 0) {
    throw new FormatError(`${source}: unexpected bytes after codes section`);
  }
  return {
    config,
    vocab: { tokens, tokenToId, stopFlags },
    topicLists,
    termLists,
    codebook: { m, k, dim, subDim, centroids },
    codeDocIds,
    codes,
  };
}

export function parseEncoder(data: Buffer, source: string): EncoderParams {
  const reader = new BinaryReader(data);
  if (reader.bytes(4, "magic").toString("latin1") !== ENCODER_MAGIC) {
    throw new FormatError(`${source}: bad magic`);
  }
  const vocabSize = reader.u32("vocab size");
  const dim = reader.u32("hidden dim");
  const nTopics = reader.u32("topic count");
  const enc: EncoderParams = {
    vocabSize,
    dim,
    nTopics,
    tokenEmb: reader.f32Array(vocabSize * dim, "token_emb"),
    seqProj: reader.f32Array(dim * dim, "seq_proj"),
    topics: reader.f32Array(nTopics * dim, "topics"),
    topicBias: reader.f32Array(nTopics, "topic_bias"),
    mlpW1: reader.f32Array(dim * dim, "mlp_w1"),
    mlpB1: reader.f32Array(dim, "mlp_b1"),
    mlpW2: reader.f32Array(dim, "mlp_w2"),
    mlpB2: reader.f32Array(1, "mlp_b2")[0],
  };
  if (reader.remaining > 0) {
    throw new FormatError(`${source}: trailing bytes after encoder checkpoint`);
  }
  return enc;
}
