// DOM glue: wires the input box, the session reducer and the API client.
// All state transitions go through dispatch() so the UI stays replayable.

import { ApiError, queryService, sendFeedback } from "./api.js";
import { renderSession } from "./render.js";
import {
  canGiveFeedback,
  canSubmit,
  initialState,
  reduce,
  type SessionEvent,
  type SessionState,
} from "./state.js";

declare global {
  interface Window {
    FAQRANK_ENDPOINT?: string;
  }
}

const endpoint = window.FAQRANK_ENDPOINT ?? "";
const TOP_K = 3;

let state: SessionState = initialState();

const history = document.getElementById("history") as HTMLDivElement;
const input = document.getElementById("query") as HTMLInputElement;
const send = document.getElementById("send") as HTMLButtonElement;

function dispatch(event: SessionEvent): void {
  state = reduce(state, event);
  render();
}

function render(): void {
  history.innerHTML = renderSession(state);
  history.scrollTop = history.scrollHeight;
  if (document.activeElement !== input) input.value = state.draft;
  send.disabled = !canSubmit(state, input.value);
}

async function submit(text: string): Promise<void> {
  if (!canSubmit(state, text)) return;
  const query = text.trim();
  dispatch({ type: "submit", text: query });
  input.value = "";
  try {
    const res = await queryService(endpoint, query, TOP_K);
    dispatch({ type: "results", query, candidates: res.results });
  } catch (err) {
    const message = err instanceof ApiError ? err.message : String(err);
    dispatch({ type: "failure", query, message });
    input.value = state.draft; // typed text comes back on failure
  }
}

async function feedback(turn: number, answerId: string, accepted: boolean): Promise<void> {
  if (!canGiveFeedback(state, turn, answerId)) return;
  const bot = state.turns[turn];
  if (!bot || bot.role !== "bot") return;
  dispatch({ type: "feedback_sent", turn, answerId, accepted });
  try {
    await sendFeedback(endpoint, bot.query, answerId, accepted);
    dispatch({ type: "feedback_ok", turn });
  } catch {
    dispatch({ type: "feedback_failed", turn });
  }
}

send.addEventListener("click", () => void submit(input.value));
input.addEventListener("keydown", (e) => {
  if (e.key === "Enter") void submit(input.value);
});
input.addEventListener("input", () => {
  dispatch({ type: "draft", text: input.value });
});

history.addEventListener("click", (e) => {
  const target = e.target as HTMLElement;
  if (target.matches("button.retry")) {
    void submit(target.dataset.query ?? "");
    return;
  }
  if (target.matches("button.fb-accept, button.fb-reject")) {
    const turn = Number(target.dataset.turn);
    const answerId = target.dataset.answer ?? "";
    void feedback(turn, answerId, target.matches("button.fb-accept"));
  }
});

render();
