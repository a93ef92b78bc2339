// Session state as a pure fold over events: replaying the same event list
// always reconstructs the same state.

import type { Candidate } from "./api.js";

export interface FeedbackRecord {
  answerId: string;
  accepted: boolean;
}

export interface UserTurn {
  role: "user";
  text: string;
}

export interface BotTurn {
  role: "bot";
  query: string;
  candidates: Candidate[]; // service order, never re-sorted
  error?: string;
  feedbackSent: FeedbackRecord[]; // acknowledged by the server
  feedbackPending: FeedbackRecord | null; // in flight
  feedbackFailed: boolean; // last attempt was rejected; retry allowed
}

export type ChatTurn = UserTurn | BotTurn;

export interface SessionState {
  turns: ChatTurn[];
  pending: boolean; // at most one in-flight query
  draft: string; // typed input survives errors
}

export type SessionEvent =
  | { type: "draft"; text: string }
  | { type: "submit"; text: string }
  | { type: "results"; query: string; candidates: Candidate[] }
  | { type: "failure"; query: string; message: string }
  | { type: "feedback_sent"; turn: number; answerId: string; accepted: boolean }
  | { type: "feedback_ok"; turn: number }
  | { type: "feedback_failed"; turn: number };

export function initialState(): SessionState {
  return { turns: [], pending: false, draft: "" };
}

export function canSubmit(state: SessionState, text: string): boolean {
  return !state.pending && text.trim().length > 0;
}

export function turnAccepted(turn: BotTurn): boolean {
  return turn.feedbackSent.some((r) => r.accepted);
}

/** Feedback is open unless a request is in flight, the answer already got a
 * verdict, or some answer on this turn was already accepted. */
export function canGiveFeedback(
  state: SessionState,
  turn: number,
  answerId: string
): boolean {
  const t = state.turns[turn];
  if (!t || t.role !== "bot" || t.error !== undefined) return false;
  if (t.feedbackPending !== null) return false;
  if (turnAccepted(t)) return false;
  if (!t.candidates.some((c) => c.answer_id === answerId)) return false;
  return !t.feedbackSent.some((r) => r.answerId === answerId);
}

export function reduce(state: SessionState, event: SessionEvent): SessionState {
  switch (event.type) {
    case "draft":
      return { ...state, draft: event.text };

    case "submit": {
      if (!canSubmit(state, event.text)) return state;
      return {
        ...state,
        pending: true,
        draft: "",
        turns: [...state.turns, { role: "user", text: event.text.trim() }],
      };
    }

    case "results": {
      if (!state.pending) return state;
      const bot: BotTurn = {
        role: "bot",
        query: event.query,
        candidates: event.candidates,
        feedbackSent: [],
        feedbackPending: null,
        feedbackFailed: false,
      };
      return { ...state, pending: false, turns: [...state.turns, bot] };
    }

    case "failure": {
      if (!state.pending) return state;
      const bot: BotTurn = {
        role: "bot",
        query: event.query,
        candidates: [],
        error: event.message,
        feedbackSent: [],
        feedbackPending: null,
        feedbackFailed: false,
      };
      // the failed query returns to the input box so nothing typed is lost
      return { ...state, pending: false, draft: event.query, turns: [...state.turns, bot] };
    }

    case "feedback_sent": {
      if (!canGiveFeedback(state, event.turn, event.answerId)) return state;
      const turns = state.turns.slice();
      const t = turns[event.turn] as BotTurn;
      turns[event.turn] = {
        ...t,
        feedbackPending: { answerId: event.answerId, accepted: event.accepted },
        feedbackFailed: false,
      };
      return { ...state, turns };
    }

    case "feedback_ok":
    case "feedback_failed": {
      const t = state.turns[event.turn];
      if (!t || t.role !== "bot" || t.feedbackPending === null) return state;
      const turns = state.turns.slice();
      turns[event.turn] =
        event.type === "feedback_ok"
          ? {
              ...t,
              feedbackSent: [...t.feedbackSent, t.feedbackPending],
              feedbackPending: null,
            }
          : { ...t, feedbackPending: null, feedbackFailed: true };
      return { ...state, turns };
    }
  }
}

export function replay(events: SessionEvent[]): SessionState {
  return events.reduce(reduce, initialState());
}

/** Turns must strictly alternate user/bot starting with user. */
export function alternationHolds(state: SessionState): boolean {
  return state.turns.every(
    (t, i) => t.role === (i % 2 === 0 ? "user" : "bot")
  );
}
