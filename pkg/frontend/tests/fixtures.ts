import { execFileSync } from "node:child_process";
import { existsSync, mkdirSync, readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const HERE = dirname(fileURLToPath(import.meta.url));
export const FIXTURE_DIR = join(HERE, ".fixtures");
const ENGINE_ROOT = join(HERE, "..", "..");

export interface Fixture {
  indexPath: string;
  encoderPath: string;
  queriesPath: string;
  runPath: string;
  searchArgs: { nprobe: number; pruneTo: number; finalK: number };
}

function cli(...args: string[]): string {
  return execFileSync("python3", ["-m", "biphase.cli", ...args], {
    cwd: ENGINE_ROOT,
    encoding: "utf-8",
  });
}

/** Builds a small end-to-end fixture with the engine CLI (cached on disk). */
export function ensureFixture(): Fixture {
  const task = join(FIXTURE_DIR, "task");
  const fixture: Fixture = {
    indexPath: join(FIXTURE_DIR, "index.bpix"),
    encoderPath: join(FIXTURE_DIR, "encoder.bin"),
    queriesPath: join(task, "queries.tsv"),
    runPath: join(FIXTURE_DIR, "run.tsv"),
    searchArgs: { nprobe: 4, pruneTo: 300, finalK: 50 },
  };
  if (existsSync(fixture.runPath)) {
    return fixture;
  }
  mkdirSync(FIXTURE_DIR, { recursive: true });
  cli(
    "synth", "--out", task, "--docs", "300", "--queries", "50",
    "--rho", "0.5", "--clusters", "8", "--teacher-dim", "16", "--seed", "17"
  );
  const vocab = join(FIXTURE_DIR, "vocab.tsv");
  cli(
    "vocab",
    "--input", join(task, "corpus.tsv"),
    "--input", join(task, "queries.tsv"),
    "--out", vocab
  );
  cli(
    "train",
    "--corpus", join(task, "corpus.tsv"),
    "--queries", join(task, "queries.tsv"),
    "--qrels", join(task, "qrels.tsv"),
    "--teacher", join(task, "teacher.bin"),
    "--vocab", vocab,
    "--out-encoder", fixture.encoderPath,
    "--out-codebook", join(FIXTURE_DIR, "codebook.bin"),
    "--dim", "16", "--topics", "16", "--epochs", "8", "--warmup-epochs", "3",
    "--pq-m", "4", "--pq-k", "16", "--k-topic", "4", "--val-fraction", "0",
    "--seed", "17"
  );
  cli(
    "build",
    "--corpus", join(task, "corpus.tsv"),
    "--vocab", vocab,
    "--encoder", fixture.encoderPath,
    "--codebook", join(FIXTURE_DIR, "codebook.bin"),
    "--out", fixture.indexPath,
    "--k-topic", "4", "--k-term", "8"
  );
  cli(
    "search",
    "--index", fixture.indexPath,
    "--encoder", fixture.encoderPath,
    "--queries", fixture.queriesPath,
    "--out", fixture.runPath,
    "--nprobe", String(fixture.searchArgs.nprobe),
    "--prune-to", String(fixture.searchArgs.pruneTo),
    "--final-k", String(fixture.searchArgs.finalK)
  );
  return fixture;
}

export function readQueries(path: string): Array<{ id: number; text: string }> {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => {
      const tab = line.indexOf("\t");
      return { id: Number(line.slice(0, tab)), text: line.slice(tab + 1) };
    });
}

export function readRunFile(path: string): Map<number, Array<{ docId: number; score: string }>> {
  const run = new Map<number, Array<{ docId: number; score: string }>>();
  for (const line of readFileSync(path, "utf-8").split("\n")) {
    if (!line.trim()) continue;
    const [qid, docid, , score] = line.split("\t");
    const rows = run.get(Number(qid)) ?? [];
    rows.push({ docId: Number(docid), score });
    run.set(Number(qid), rows);
  }
  return run;
}
