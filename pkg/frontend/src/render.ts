// HTML-string renderers. Every piece of dynamic text passes through
// escapeHtml: answers are data, never markup.

import type { BotTurn, ChatTurn, SessionState } from "./state.js";
import { turnAccepted } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function scoreBar(score: number, min: number, max: number): string {
  const span = max - min;
  const frac = span > 0 ? (score - min) / span : 1;
  const width = Math.round(8 + 92 * Math.max(0, Math.min(1, frac)));
  return `<span class="bar"><span class="bar-fill" style="width:${width}%"></span></span>`;
}

function feedbackBadge(turn: BotTurn): string {
  if (turn.feedbackPending) return `<span class="badge pending">sending&hellip;</span>`;
  if (turn.feedbackFailed) return `<span class="badge failed">feedback failed, try again</span>`;
  if (turnAccepted(turn)) return `<span class="badge ok">feedback recorded</span>`;
  if (turn.feedbackSent.length > 0)
    return `<span class="badge rejected">marked wrong&ensp;&mdash;&ensp;pick a better answer</span>`;
  return "";
}

function renderCandidate(turn: BotTurn, turnIndex: number, rank: number,
                         min: number, max: number): string {
  const c = turn.candidates[rank];
  if (!c) return "";
  const id = escapeHtml(c.answer_id);
  const sent = turn.feedbackSent.find((r) => r.answerId === c.answer_id);
  const disabled = turn.feedbackPending !== null || turnAccepted(turn) || sent !== undefined;
  const buttons = `
    <button class="fb-accept" data-turn="${turnIndex}" data-answer="${id}"
      ${disabled ? "disabled" : ""} title="mark correct">&#10003;</button>
    <button class="fb-reject" data-turn="${turnIndex}" data-answer="${id}"
      ${disabled ? "disabled" : ""} title="mark wrong">&#10007;</button>`;
  const verdict = sent ? `<span class="verdict">${sent.accepted ? "&#10003;" : "&#10007;"}</span>` : "";
  return `
    <li class="candidate${rank === 0 ? " top" : ""}">
      <div class="answer-text">${escapeHtml(c.text)}</div>
      <div class="meta">
        <code class="aid">${id}</code>
        ${scoreBar(c.score, min, max)}
        <span class="score">${c.score.toFixed(3)}</span>
        ${buttons}${verdict}
      </div>
    </li>`;
}

export function renderTurn(turn: ChatTurn, turnIndex: number): string {
  if (turn.role === "user") {
    return `<div class="turn user"><div class="bubble">${escapeHtml(turn.text)}</div></div>`;
  }
  if (turn.error !== undefined) {
    return `
      <div class="turn bot error">
        <div class="bubble">
          <strong>request failed:</strong> ${escapeHtml(turn.error)}
          <button class="retry" data-query="${escapeHtml(turn.query)}">retry</button>
        </div>
      </div>`;
  }
  const scores = turn.candidates.map((c) => c.score);
  const min = Math.min(...scores);
  const max = Math.max(...scores);
  const [top, ...rest] = turn.candidates.map((_, i) =>
    renderCandidate(turn, turnIndex, i, min, max)
  );
  const alternatives = rest.length
    ? `<details><summary>${rest.length} alternative${rest.length > 1 ? "s" : ""}</summary>
         <ul class="candidates">${rest.join("")}</ul></details>`
    : "";
  return `
    <div class="turn bot">
      <div class="bubble">
        <ul class="candidates">${top ?? ""}</ul>
        ${alternatives}
        ${feedbackBadge(turn)}
      </div>
    </div>`;
}

export function renderSession(state: SessionState): string {
  const turns = state.turns.map((t, i) => renderTurn(t, i)).join("\n");
  const typing = state.pending ? `<div class="turn bot"><div class="bubble typing">&hellip;</div></div>` : "";
  return turns + typing;
}
