/** Fixed color mapping for transcript turn types.
 *
 * The palette is part of the UI contract: every transcript view uses
 * exactly these colors so operators can read any transcript at a glance.
 *
 *   customer        #1f6feb  blue
 *   assistant_text  #2da44e  green
 *   tool_call       #9a6700  amber
 *   tool_response   #8250df  purple
 *   routing_event   #cf222e  red
 */

export const TURN_COLORS: Record<string, string> = {
  customer: "#1f6feb",
  assistant_text: "#2da44e",
  tool_call: "#9a6700",
  tool_response: "#8250df",
  routing_event: "#cf222e",
};

export function turnColor(kind: string): string {
  return TURN_COLORS[kind] ?? "#57606a";
}

export function turnClass(kind: string): string {
  return `turn-${kind.replace(/_/g, "-")}`;
}
