/** Line-level diff for side-by-side prompt version comparison.
 *
 * Classic LCS alignment. Prompt texts are a few hundred lines at most,
 * so the quadratic table is fine and keeps the output exact.
 */

export type RowKind = "same" | "added" | "removed" | "changed";

export interface DiffRow {
  kind: RowKind;
  left: string | null;
  right: string | null;
  leftNumber: number | null;
  rightNumber: number | null;
}

function lcsTable(a: string[], b: string[]): number[][] {
  const table: number[][] = [];
  for (let i = 0; i <= a.length; i++) {
    table.push(new Array<number>(b.length + 1).fill(0));
  }
  for (let i = a.length - 1; i >= 0; i--) {
    const row = table[i]!;
    const next = table[i + 1]!;
    for (let j = b.length - 1; j >= 0; j--) {
      row[j] = a[i] === b[j] ? next[j + 1]! + 1 : Math.max(next[j]!, row[j + 1]!);
    }
  }
  return table;
}

/** Pair up every removed line with the next added line where possible. */
function foldChanges(rows: DiffRow[]): DiffRow[] {
  const out: DiffRow[] = [];
  let i = 0;
  while (i < rows.length) {
    const row = rows[i]!;
    if (row.kind !== "removed") {
      out.push(row);
      i++;
      continue;
    }
    const removed: DiffRow[] = [];
    while (i < rows.length && rows[i]!.kind === "removed") {
      removed.push(rows[i]!);
      i++;
    }
    const added: DiffRow[] = [];
    while (i < rows.length && rows[i]!.kind === "added") {
      added.push(rows[i]!);
      i++;
    }
    const paired = Math.min(removed.length, added.length);
    for (let k = 0; k < paired; k++) {
      out.push({
        kind: "changed",
        left: removed[k]!.left,
        right: added[k]!.right,
        leftNumber: removed[k]!.leftNumber,
        rightNumber: added[k]!.rightNumber,
      });
    }
    out.push(...removed.slice(paired), ...added.slice(paired));
  }
  return out;
}

export function diffLines(leftText: string, rightText: string): DiffRow[] {
  const a = leftText.split("\n");
  const b = rightText.split("\n");
  const table = lcsTable(a, b);
  const rows: DiffRow[] = [];
  let i = 0;
  let j = 0;
  while (i < a.length && j < b.length) {
    if (a[i] === b[j]) {
      rows.push({ kind: "same", left: a[i]!, right: b[j]!, leftNumber: i + 1, rightNumber: j + 1 });
      i++;
      j++;
    } else if (table[i + 1]![j]! >= table[i]![j + 1]!) {
      rows.push({ kind: "removed", left: a[i]!, right: null, leftNumber: i + 1, rightNumber: null });
      i++;
    } else {
      rows.push({ kind: "added", left: null, right: b[j]!, leftNumber: null, rightNumber: j + 1 });
      j++;
    }
  }
  while (i < a.length) {
    rows.push({ kind: "removed", left: a[i]!, right: null, leftNumber: i + 1, rightNumber: null });
    i++;
  }
  while (j < b.length) {
    rows.push({ kind: "added", left: null, right: b[j]!, leftNumber: null, rightNumber: j + 1 });
    j++;
  }
  return foldChanges(rows);
}

export function diffStats(rows: DiffRow[]): { added: number; removed: number; changed: number } {
  let added = 0;
  let removed = 0;
  let changed = 0;
  for (const row of rows) {
    if (row.kind === "added") added++;
    else if (row.kind === "removed") removed++;
    else if (row.kind === "changed") changed++;
  }
  return { added, removed, changed };
}
