/**
 * Client-side validation for split verdicts: the subsets must exactly
 * partition the cluster's member list. Invalid splits are blocked before
 * any network call.
 */

export interface SplitValidation {
  ok: boolean;
  errors: string[];
}

export function validateSplit(members: number[], subsets: number[][]): SplitValidation {
  const errors: string[] = [];
  if (subsets.length < 2) {
    errors.push("a split needs at least two subsets");
  }
  const flat = subsets.flat();
  const seen = new Set<number>();
  for (const user of flat) {
    if (seen.has(user)) {
      errors.push(`user ${user} appears in more than one subset`);
    }
    seen.add(user);
  }
  const memberSet = new Set(members);
  for (const user of flat) {
    if (!memberSet.has(user)) {
      errors.push(`user ${user} is not a member of this cluster`);
    }
  }
  for (const user of members) {
    if (!seen.has(user)) {
      errors.push(`member ${user} is missing from the subsets`);
    }
  }
  for (const [i, subset] of subsets.entries()) {
    if (subset.length === 0) {
      errors.push(`subset ${i + 1} is empty`);
    }
  }
  return { ok: errors.length === 0, errors };
}

/** Parse "1,2,3 | 4,5" style input into subsets. */
export function parseSubsets(text: string): number[][] {
  return text
    .split("|")
    .map((part) =>
      part
        .split(/[,\s]+/)
        .map((t) => t.trim())
        .filter((t) => t.length > 0)
        .map((t) => Number(t)),
    )
    .filter((subset) => subset.length > 0);
}
