/**
 * Legend for the shared color scale. The distance images themselves are
 * colorized by the service and displayed untouched; only this decorative
 * bar is drawn client-side (standard viridis anchor colors).
 */
const VIRIDIS_STOPS = [
  "#440154",
  "#482878",
  "#3e4989",
  "#31688e",
  "#26828e",
  "#1f9e89",
  "#35b779",
  "#6ece58",
  "#b5de2b",
  "#fde725",
];

export function colorbarGradientCss(): string {
  const n = VIRIDIS_STOPS.length - 1;
  const stops = VIRIDIS_STOPS.map((c, i) => `${c} ${(100 * i) / n}%`);
  return `linear-gradient(to right, ${stops.join(", ")})`;
}

/** Evenly spaced tick labels from 0 to the clip maximum of the color scale. */
export function colorbarTicks(clipMax: number, count = 6): string[] {
  const ticks: string[] = [];
  for (let i = 0; i < count; i++) {
    const value = (clipMax * i) / (count - 1);
    ticks.push(Number.isInteger(value) ? String(value) : value.toFixed(1));
  }
  return ticks;
}
