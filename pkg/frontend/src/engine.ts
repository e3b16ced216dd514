import type { EncoderParams, ParsedIndex, PostingList, Vocabulary } from "./formats.js";

export interface SearchParams {
  /** topic posting lists to visit (nprobe) */
  kTopicQuery?: number;
  useAllQueryTerms?: boolean;
  kTermQuery?: number;
  pruneTo?: number;
  finalK?: number;
  usePq?: boolean;
}

export interface SearchHit {
  docId: number;
  score: number;
}

export interface CostCounters {
  postingsScanned: number;
  candidatesUnion: number;
  adcEvals: number;
}

export interface SearchOutcome {
  ranked: SearchHit[];
  prunedPool: SearchHit[];
  cost: CostCounters;
}

const DEFAULTS: Required<SearchParams> = {
  kTopicQuery: 8,
  useAllQueryTerms: true,
  kTermQuery: -1,
  pruneTo: 5000,
  finalK: 1000,
  usePq: true,
};

// mirrors the ASCII punctuation set the engine strips
const PUNCT = new Set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~");

export function tokenize(text: string, vocab: Vocabulary, maxLen: number): number[] {
  let cleaned = "";
  for (const ch of text.toLowerCase()) {
    cleaned += PUNCT.has(ch) ? " " : ch;
  }
  const out: number[] = [];
  for (const word of cleaned.split(/\s+/u)) {
    if (!word) continue;
    const tid = vocab.tokenToId.get(word);
    if (tid !== undefined) {
      out.push(tid);
      if (out.length === maxLen) break;
    }
  }
  return out;
}

/** Pooled sequence state: seq_proj applied to the mean token embedding. */
export function sequenceState(enc: EncoderParams, tokens: number[]): Float64Array {
  const d = enc.dim;
  const mean = new Float64Array(d);
  for (const tid of tokens) {
    const base = tid * d;
    for (let j = 0; j < d; j++) mean[j] += enc.tokenEmb[base + j];
  }
  for (let j = 0; j < d; j++) mean[j] /= tokens.length;
  const h0 = new Float64Array(d);
  for (let i = 0; i < d; i++) {
    let acc = 0;
    const row = i * d;
    for (let j = 0; j < d; j++) acc += enc.seqProj[row + j] * mean[j];
    h0[i] = acc;
  }
  return h0;
}

export function topicMembership(enc: EncoderParams, h0: Float64Array): Float64Array {
  const out = new Float64Array(enc.nTopics);
  for (let i = 0; i < enc.nTopics; i++) {
    let acc = 0;
    const row = i * enc.dim;
    for (let j = 0; j < enc.dim; j++) acc += enc.topics[row + j] * h0[j];
    out[i] = acc + enc.topicBias[i];
  }
  return out;
}

/** ReLU-clamped two-layer score of one token embedding. */
function termScore(enc: EncoderParams, tokenId: number): number {
  const d = enc.dim;
  const base = tokenId * d;
  let dot2 = 0;
  for (let i = 0; i < d; i++) {
    let dot1 = 0;
    const row = i * d;
    for (let j = 0; j < d; j++) dot1 += enc.mlpW1[row + j] * enc.tokenEmb[base + j];
    const act = dot1 + enc.mlpB1[i];
    if (act > 0) dot2 += enc.mlpW2[i] * act;
  }
  const pre2 = dot2 + enc.mlpB2;
  return pre2 > 0 ? pre2 : 0;
}

export function termMembership(enc: EncoderParams, tokens: number[]): Map<number, number> {
  const out = new Map<number, number>();
  for (const tid of tokens) {
    const score = termScore(enc, tid);
    if (score > 0 && score > (out.get(tid) ?? 0)) {
      out.set(tid, score);
    }
  }
  return out;
}

/** Ids of the k largest entries, ties toward the smaller id. */
function topKIndices(values: Float64Array, k: number): number[] {
  const order = Array.from(values.keys());
  order.sort((a, b) => (values[b] - values[a]) || (a - b));
  return order.slice(0, Math.max(k, 0));
}

interface Entry {
  phase: "topic" | "term";
  id: number;
  queryWeight: number;
}

function routedEntries(
  phiTopic: Float64Array,
  phiTerm: Map<number, number>,
  params: Required<SearchParams>
): Entry[] {
  const entries: Entry[] = [];
  const topics = topKIndices(phiTopic, params.kTopicQuery)
    .filter((i) => phiTopic[i] > 0)
    .sort((a, b) => a - b);
  for (const i of topics) {
    entries.push({ phase: "topic", id: i, queryWeight: phiTopic[i] });
  }
  let termIds = [...phiTerm.keys()].filter((t) => (phiTerm.get(t) ?? 0) > 0).sort((a, b) => a - b);
  if (!params.useAllQueryTerms && params.kTermQuery >= 0) {
    const ranked = [...termIds].sort(
      (a, b) => (phiTerm.get(b)! - phiTerm.get(a)!) || (a - b)
    );
    termIds = ranked.slice(0, params.kTermQuery).sort((a, b) => a - b);
  }
  for (const t of termIds) {
    entries.push({ phase: "term", id: t, queryWeight: phiTerm.get(t)! });
  }
  return entries;
}

function prune(
  index: ParsedIndex,
  entries: Entry[],
  pruneTo: number,
  cost: CostCounters
): SearchHit[] {
  const sims = new Map<number, number>();
  for (const entry of entries) {
    const list: PostingList | undefined =
      entry.phase === "topic" ? index.topicLists[entry.id] : index.termLists.get(entry.id);
    if (!list || list.docIds.length === 0) continue;
    cost.postingsScanned += list.docIds.length;
    const w = entry.queryWeight;
    for (let j = 0; j < list.docIds.length; j++) {
      const doc = list.docIds[j];
      sims.set(doc, (sims.get(doc) ?? 0) + list.weights[j] * w);
    }
  }
  cost.candidatesUnion = sims.size;
  const pool: SearchHit[] = [...sims.entries()].map(([docId, score]) => ({ docId, score }));
  pool.sort((a, b) => (b.score - a.score) || (a.docId - b.docId));
  return pool.slice(0, pruneTo);
}

function codeRowOf(index: ParsedIndex, docId: number): number {
  const ids = index.codeDocIds;
  let lo = 0;
  let hi = ids.length;
  while (lo < hi) {
    const mid = (lo + hi) >>> 1;
    if (ids[mid] < docId) lo = mid + 1;
    else hi = mid;
  }
  return lo;
}

function postVerify(
  index: ParsedIndex,
  h0: Float64Array,
  pool: SearchHit[],
  finalK: number,
  cost: CostCounters
): SearchHit[] {
  if (pool.length === 0) return [];
  const { m, k, subDim, centroids } = index.codebook;
  // per-sub-space lookup table of query/centroid inner products
  const table = new Float64Array(m * k);
  for (let s = 0; s < m; s++) {
    for (let c = 0; c < k; c++) {
      let acc = 0;
      const base = (s * k + c) * subDim;
      for (let j = 0; j < subDim; j++) acc += centroids[base + j] * h0[s * subDim + j];
      table[s * k + c] = acc;
    }
  }
  const ranked: SearchHit[] = pool.map(({ docId }) => {
    const row = codeRowOf(index, docId) * m;
    let score = 0;
    for (let s = 0; s < m; s++) {
      score += table[s * k + index.codes[row + s]];
    }
    return { docId, score };
  });
  cost.adcEvals += pool.length;
  ranked.sort((a, b) => (b.score - a.score) || (a.docId - b.docId));
  return ranked.slice(0, finalK);
}

export function searchText(
  index: ParsedIndex,
  enc: EncoderParams,
  text: string,
  params: SearchParams = {}
): SearchOutcome {
  const p: Required<SearchParams> = { ...DEFAULTS, ...params };
  const cost: CostCounters = { postingsScanned: 0, candidatesUnion: 0, adcEvals: 0 };
  const tokens = tokenize(text, index.vocab, index.config.maxQueryTokens);
  if (tokens.length === 0) {
    return { ranked: [], prunedPool: [], cost };
  }
  const h0 = sequenceState(enc, tokens);
  const entries = routedEntries(topicMembership(enc, h0), termMembership(enc, tokens), p);
  const pool = prune(index, entries, p.pruneTo, cost);
  const ranked = p.usePq ? postVerify(index, h0, pool, p.finalK, cost) : pool.slice(0, p.finalK);
  return { ranked, prunedPool: pool, cost };
}
