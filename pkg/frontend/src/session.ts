import type { DistanceGrid, DistanceReadout } from "./types.js";

export type Classification = "foreground" | "background";

/**
 * Background means strictly farther than the threshold; a pixel exactly AT
 * the threshold counts as foreground, and a missing depth (null) reads as
 * infinitely far, i.e. background. Matches the pipeline's mask convention.
 */
export function classifyDistance(
  distance: number | null,
  threshold: number,
): Classification {
  if (distance === null) return "background";
  return distance > threshold ? "background" : "foreground";
}

/** Per-cell background flags for the preview overlay (true = dim as background). */
export function overlayMask(grid: DistanceGrid, threshold: number): boolean[][] {
  return grid.values.map((row) =>
    row.map((d) => classifyDistance(d, threshold) === "background"),
  );
}

/** The readout is a verbatim rendering of the service value, never rounded. */
export function formatReadout(readout: DistanceReadout): string {
  if (!readout.finite || readout.distance === null) return "inf";
  return String(readout.distance);
}

export interface CandidateCheck {
  ok: boolean;
  value: number;
  reason: string | null;
}

/** A usable threshold is finite and sits strictly inside (0, r_outer). */
export function checkCandidate(value: number, rOuter: number): CandidateCheck {
  if (!Number.isFinite(value)) {
    return { ok: false, value, reason: "threshold must be a number" };
  }
  if (value <= 0) {
    return { ok: false, value, reason: "threshold must be positive" };
  }
  if (value >= rOuter) {
    return { ok: false, value, reason: `threshold must be below r_outer = ${rOuter}` };
  }
  return { ok: true, value, reason: null };
}

export function parseCandidate(text: string, rOuter: number): CandidateCheck {
  const trimmed = text.trim();
  if (trimmed === "") {
    return { ok: false, value: NaN, reason: "enter a threshold" };
  }
  return checkCandidate(Number(trimmed), rOuter);
}

/** Client-side state: candidate threshold plus the confirm gate. */
export class UiSession {
  candidate: number | null = null;
  confirmedRInner: number | null = null;
  lastError: string | null = null;

  constructor(readonly rOuter: number) {}

  setCandidate(value: number): CandidateCheck {
    const check = checkCandidate(value, this.rOuter);
    this.candidate = check.ok ? check.value : this.candidate;
    this.lastError = check.reason;
    return check;
  }

  setCandidateText(text: string): CandidateCheck {
    const check = parseCandidate(text, this.rOuter);
    this.candidate = check.ok ? check.value : this.candidate;
    this.lastError = check.reason;
    return check;
  }

  /** Confirm stays disabled until a finite positive in-range threshold is set. */
  canConfirm(): boolean {
    return this.candidate !== null && checkCandidate(this.candidate, this.rOuter).ok;
  }

  markConfirmed(rInner: number): void {
    this.confirmedRInner = rInner;
    this.lastError = null;
  }
}
