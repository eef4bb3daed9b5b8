/** Log-scale strength-meter mapping for k.
 *
 * Privacy reads on a log scale: identifying someone in a crowd of k carries
 * log2(k) bits of uncertainty. The gauge maps log2(k) over [0, 33] onto
 * [0, 1] (2^33 ≈ the global population), red at k = 1 and fully green from
 * a million up. Monotone in k by construction.
 */

const LOG2_SPAN = 33;
const GREEN_AT = Math.log2(1_000_000);

export function gaugePosition(kHat: number): number {
  if (!(kHat >= 1)) throw new Error(`k must be >= 1, got ${kHat}`);
  return Math.min(Math.log2(kHat) / LOG2_SPAN, 1);
}

/** CSS color along red → yellow → green, saturating green at k >= 10^6. */
export function gaugeColor(kHat: number): string {
  const t = Math.min(Math.log2(Math.max(kHat, 1)) / GREEN_AT, 1);
  const hue = Math.round(120 * t); // 0 red, 120 green
  return `hsl(${hue}, 85%, 45%)`;
}

export function gaugeLabel(kHat: number): string {
  if (kHat <= 1) return "uniquely identifying";
  if (kHat < 100) return "a handful of people";
  if (kHat < 10_000) return "a small crowd";
  if (kHat < 1_000_000) return "a large crowd";
  return "well hidden";
}
