/**
 * Color assignment.
 *
 * Labels get stable, well-spread hues from a hash of the label id, so the
 * same cell keeps its color across deltas, sessions, and machines.  Scribbles
 * are an exception: they are all drawn in one yellow, whatever cell they
 * represent.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

/** Every scribble is drawn in this color regardless of its label. */
export const SCRIBBLE_COLOR: Rgb = { r: 255, g: 221, b: 0 };

/** Background (label 0) stays transparent black. */
export const UNLABELED: Rgb = { r: 0, g: 0, b: 0 };

/**
 * The golden-ratio conjugate walks the hue circle without clustering, and a
 * multiplicative scramble first decorrelates consecutive label ids.
 */
export function labelHue(label: number): number {
  const scrambled = (label * 2654435761) >>> 0; // Knuth's hash, mod 2^32
  return (scrambled * 0.61803398875) % 1;
}

function hslChannel(p: number, q: number, t: number): number {
  let u = t;
  if (u < 0) u += 1;
  if (u > 1) u -= 1;
  if (u < 1 / 6) return p + (q - p) * 6 * u;
  if (u < 1 / 2) return q;
  if (u < 2 / 3) return p + (q - p) * (2 / 3 - u) * 6;
  return p;
}

export function hslToRgb(h: number, s: number, l: number): Rgb {
  if (s === 0) {
    const v = Math.round(l * 255);
    return { r: v, g: v, b: v };
  }
  const q = l < 0.5 ? l * (1 + s) : l + s - l * s;
  const p = 2 * l - q;
  return {
    r: Math.round(hslChannel(p, q, h + 1 / 3) * 255),
    g: Math.round(hslChannel(p, q, h) * 255),
    b: Math.round(hslChannel(p, q, h - 1 / 3) * 255),
  };
}

/** Deterministic label color; label 0 is reserved for "no cell". */
export function labelColor(label: number): Rgb {
  if (label === 0) return UNLABELED;
  return hslToRgb(labelHue(label), 0.65, 0.55);
}
