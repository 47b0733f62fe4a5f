// Session persistence across page reloads: the stored /rank payload plus the
// session id replayed against the live service reproduce the same view.

import { RankResponse } from "./api.js";

const KEY = "r2e-audit-session";

export interface PersistedView {
  rank: RankResponse;
  selectedAnswer: string | null;
  indexChecksum: string;
}

export function saveView(view: PersistedView): void {
  try {
    sessionStorage.setItem(KEY, JSON.stringify(view));
  } catch {
    // storage full or unavailable: persistence is best-effort
  }
}

export function loadView(): PersistedView | null {
  try {
    const raw = sessionStorage.getItem(KEY);
    return raw ? (JSON.parse(raw) as PersistedView) : null;
  } catch {
    return null;
  }
}

export function clearView(): void {
  try {
    sessionStorage.removeItem(KEY);
  } catch {
    // ignore
  }
}
