/** Wire types for the owclip workbench HTTP API. */

export interface PoolPayload {
  ids: string[];
  count: number;
  summary: {
    n_proposals: number;
    n_known: number;
    n_unknown: number;
    n_classes: number;
    n_episodes: number;
  };
}

export interface ProjectionPoint {
  id: string;
  x: number;
  y: number;
  cluster: number;
}

export interface ProjectionPayload {
  method: string;
  seed: number;
  k: number;
  sse_curve: [number, number][];
  points: ProjectionPoint[];
}

export interface LassoPayload {
  ids: string[];
  count: number;
}

export interface Ranges {
  ls: number;
  hs: number;
  lh: number;
  hh: number;
}

export interface SessionPayload {
  session_id: string;
  label: string;
  state: "open" | "finalized";
  version: number;
  phrases: string[];
  selected: boolean[];
  ranges: Ranges;
  candidates: { simple: string[]; hard: string[] };
  accepted_simple: string[];
  accepted_hard: string[];
}

export interface CandidatesPayload {
  simple: string[];
  hard: string[];
  counts: { simple: number; hard: number };
  ranges: Ranges;
}

export interface DensityPayload {
  x: number[];
  y: number[];
  value: "score" | "relative";
  ranges: Ranges;
}

export interface TrainStatus {
  state: "idle" | "running" | "done" | "failed";
  report: Record<string, unknown> | null;
  eval: EvalPayload | null;
  error: string | null;
}

export interface EvalPayload {
  per_class_ap: Record<string, number>;
  map_previous_known: number | null;
  map_current_known: number | null;
  map_both: number | null;
  skipped_classes: string[];
  t_threshold: number | null;
  unknown_recall: number | null;
}

export interface ClassesPayload {
  classes: { label: string; episode_id: number; phrases: string[] }[];
  episodes: { episode_id: number; class_indices: number[]; finalized: boolean }[];
}

export type AnnotateMode = "delete" | "reserve";

export type Ablation =
  | "full"
  | "wo-PhraseSelection"
  | "wo-LLM"
  | "wo-Differentiation"
  | "wo-CS";
