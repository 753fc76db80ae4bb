/** Wire models of the segmentation service (JSON bodies, verbatim). */

export interface ViewsInfo {
  view_ids: string[];
  r_outer: number;
  width: number;
  height: number;
}

export interface DistanceReadout {
  view_id: string;
  u: number;
  v: number;
  /** Metric distance from the scene center; null when the depth is missing. */
  distance: number | null;
  finite: boolean;
}

export interface DistanceGrid {
  view_id: string;
  width: number;
  height: number;
  /** Source-pixel columns/rows each grid cell was sampled from. */
  u_coords: number[];
  v_coords: number[];
  /** values[row][col] aligned with v_coords x u_coords; null = missing depth. */
  values: (number | null)[][];
}

export interface ThresholdAck {
  status: string;
  r_inner: number;
  confirmations: number;
}
