/** Client-side annotation drafts for one query batch.
 *
 * A draft holds the annotator's chosen tag per token. Model suggestions are
 * kept separately and never flow into the draft without an explicit confirm
 * action, so the UI cannot fabricate tags. Submission is blocked until every
 * token of every sentence carries a confirmed tag.
 */

import type { QuerySentence } from "./api.js";

export interface SentenceDraft {
  sentenceId: number;
  surfaces: string[];
  /** Confirmed tags; null = not yet tagged. */
  tags: (string | null)[];
  /** Model pre-fill, shown ghosted until confirmed. */
  suggestions: string[] | null;
}

export class BatchDraft {
  readonly scheme: string[];
  readonly sentences: Map<number, SentenceDraft> = new Map();

  constructor(scheme: string[], batch: QuerySentence[]) {
    if (!scheme.includes("O")) throw new Error("label scheme must contain O");
    this.scheme = scheme;
    for (const item of batch) {
      this.sentences.set(item.sentence_id, {
        sentenceId: item.sentence_id,
        surfaces: item.tokens.map((t) => t.surface),
        tags: item.tokens.map(() => null),
        suggestions: item.suggested_tags,
      });
    }
  }

  get entityClasses(): string[] {
    return this.scheme
      .filter((t) => t.startsWith("B-"))
      .map((t) => t.slice(2));
  }

  private draft(sentenceId: number): SentenceDraft {
    const draft = this.sentences.get(sentenceId);
    if (!draft) throw new Error(`sentence ${sentenceId} is not in this batch`);
    return draft;
  }

  setTag(sentenceId: number, position: number, tag: string): void {
    const draft = this.draft(sentenceId);
    if (position < 0 || position >= draft.tags.length) {
      throw new Error(`token position ${position} out of range`);
    }
    if (!this.scheme.includes(tag)) {
      throw new Error(`tag ${tag} is not in the label scheme`);
    }
    draft.tags[position] = tag;
  }

  /** Tag an inclusive token range as one entity span (B- then I-). */
  tagSpan(sentenceId: number, start: number, end: number, entityClass: string): void {
    if (!this.entityClasses.includes(entityClass)) {
      throw new Error(`unknown entity class ${entityClass}`);
    }
    if (end < start) [start, end] = [end, start];
    this.setTag(sentenceId, start, `B-${entityClass}`);
    for (let i = start + 1; i <= end; i++) {
      this.setTag(sentenceId, i, `I-${entityClass}`);
    }
  }

  clearTag(sentenceId: number, position: number): void {
    this.draft(sentenceId).tags[position] = null;
  }

  /** Confirm the model suggestion for one token (explicit user action). */
  confirmSuggestion(sentenceId: number, position: number): void {
    const draft = this.draft(sentenceId);
    if (!draft.suggestions) throw new Error("no suggestions for this sentence");
    this.setTag(sentenceId, position, draft.suggestions[position]);
  }

  /** Confirm all suggestions of one sentence (explicit user action). */
  confirmAllSuggestions(sentenceId: number): void {
    const draft = this.draft(sentenceId);
    if (!draft.suggestions) throw new Error("no suggestions for this sentence");
    draft.suggestions.forEach((_, i) => this.confirmSuggestion(sentenceId, i));
  }

  sentenceComplete(sentenceId: number): boolean {
    return this.draft(sentenceId).tags.every((t) => t !== null);
  }

  complete(): boolean {
    for (const draft of this.sentences.values()) {
      if (draft.tags.some((t) => t === null)) return false;
    }
    return true;
  }

  missingCount(): number {
    let missing = 0;
    for (const draft of this.sentences.values()) {
      missing += draft.tags.filter((t) => t === null).length;
    }
    return missing;
  }

  /** Submission payload; throws while any token is untagged. */
  toAnnotations(): { sentence_id: number; tags: string[] }[] {
    if (!this.complete()) {
      throw new Error(
        `batch incomplete: ${this.missingCount()} tokens still untagged`,
      );
    }
    return [...this.sentences.values()].map((draft) => ({
      sentence_id: draft.sentenceId,
      tags: draft.tags as string[],
    }));
  }
}
