import { MapExtent } from "./protocol.js";

// Math for the 32x32 interaction grid the table projects over the focused
// extent. Rows count down from the north edge, matching the camera frame.
export const GRID_ROWS = 32;
export const GRID_COLS = 32;

export interface Cell {
  row: number;
  col: number;
}

export interface MapPoint {
  x: number;
  y: number;
}

const width = (e: MapExtent): number => e.max_x - e.min_x;
const height = (e: MapExtent): number => e.max_y - e.min_y;

/**
 * Map coordinate of the center of a k x k footprint anchored at (row, col).
 * A 2x2 housing brick anchored at (15, 15) over a square extent lands
 * exactly on the extent's midpoint.
 */
export function footprintCenter(
  extent: MapExtent,
  anchor: Cell,
  k = 1,
  rows = GRID_ROWS,
  cols = GRID_COLS,
): MapPoint {
  return {
    x: extent.min_x + ((anchor.col + k / 2) / cols) * width(extent),
    y: extent.max_y - ((anchor.row + k / 2) / rows) * height(extent),
  };
}

/** Grid cell containing a map coordinate, clamped to the grid edges. */
export function cellAt(
  extent: MapExtent,
  point: MapPoint,
  rows = GRID_ROWS,
  cols = GRID_COLS,
): Cell {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  const col = Math.floor(((point.x - extent.min_x) / width(extent)) * cols);
  const row = Math.floor(((extent.max_y - point.y) / height(extent)) * rows);
  return { row: clamp(row, rows - 1), col: clamp(col, cols - 1) };
}

export interface PixelRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Screen rectangle for a k x k footprint when the extent fills a canvas of
 * canvasW x canvasH pixels, y growing downward.
 */
export function footprintRect(
  anchor: Cell,
  k: number,
  canvasW: number,
  canvasH: number,
  rows = GRID_ROWS,
  cols = GRID_COLS,
): PixelRect {
  const cellW = canvasW / cols;
  const cellH = canvasH / rows;
  return {
    x: anchor.col * cellW,
    y: anchor.row * cellH,
    w: k * cellW,
    h: k * cellH,
  };
}

/** True when a k x k footprint anchored at (row, col) stays on the grid. */
export function fitsGrid(
  anchor: Cell,
  k: number,
  rows = GRID_ROWS,
  cols = GRID_COLS,
): boolean {
  return (
    anchor.row >= 0 &&
    anchor.col >= 0 &&
    anchor.row + k <= rows &&
    anchor.col + k <= cols
  );
}
