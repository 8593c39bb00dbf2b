/** Chat view state, derived purely from service responses.
 *
 * No recommendation logic lives client-side: the panel mirrors the
 * service's ranked order and the timeline only re-renders the entity
 * history the service returned, using the decay it advertises.
 */

import type { HistoryEntry, MessageReply, RankedItem } from "./api.js";

export type Role = "seeker" | "recommender";

export interface ChatMessage {
  role: Role;
  text: string;
}

export interface TimelineBar {
  name: string;
  position: number;
  /** percent of the recency weighting; bars sum to 100 */
  weight: number;
}

export interface ChatViewState {
  sessionId: string;
  lambda: number;
  messages: ChatMessage[];
  rankedItems: RankedItem[];
  timeline: TimelineBar[];
  pending: boolean;
  /** message of the last failed send, null when healthy */
  error: string | null;
  /** text of the last failed send, kept for one-click retry */
  failedText: string | null;
}

export function newSessionState(sessionId: string, lambda: number): ChatViewState {
  return {
    sessionId,
    lambda,
    messages: [],
    rankedItems: [],
    timeline: [],
    pending: false,
    error: null,
    failedText: null,
  };
}

/** Recency weights lambda^p / sum_q lambda^q as percentages.
 *
 * Position 0 is the earliest mention. Exponents are shifted by the
 * largest position when lambda > 1 so long histories cannot overflow;
 * normalization cancels the shift.
 */
export function timelineWeights(history: HistoryEntry[], lambda: number): TimelineBar[] {
  if (lambda <= 0) {
    throw new Error(`decay must be positive, got ${lambda}`);
  }
  if (history.length === 0) {
    return [];
  }
  const ordered = [...history].sort((a, b) => a.position - b.position);
  const last = ordered[ordered.length - 1]!;
  const shift = lambda > 1 ? last.position : 0;
  const raw = ordered.map((h) => Math.pow(lambda, h.position - shift));
  const total = raw.reduce((a, b) => a + b, 0);
  return ordered.map((h, i) => ({
    name: h.name,
    position: h.position,
    weight: (100 * raw[i]!) / total,
  }));
}

export function canSend(state: ChatViewState, text: string): boolean {
  return !state.pending && text.trim().length > 0;
}

/** Optimistic seeker bubble; the reply or the rollback follows. */
export function beginSend(state: ChatViewState, text: string): ChatViewState {
  return {
    ...state,
    pending: true,
    error: null,
    failedText: null,
    messages: [...state.messages, { role: "seeker", text }],
  };
}

export function applyReply(state: ChatViewState, reply: MessageReply): ChatViewState {
  return {
    ...state,
    pending: false,
    messages: [...state.messages, { role: "recommender", text: reply.response_text }],
    rankedItems: reply.ranked_items,
    timeline: timelineWeights(reply.entity_history, state.lambda),
  };
}

/** Roll back the optimistic bubble so prior messages stay intact. */
export function failSend(state: ChatViewState, text: string, message: string): ChatViewState {
  return {
    ...state,
    pending: false,
    messages: state.messages.slice(0, -1),
    error: message,
    failedText: text,
  };
}
