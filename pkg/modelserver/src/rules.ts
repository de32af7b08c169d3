/**
 * Exact-match rewrite rules.
 *
 * A rule fires when its left-hand side equals the queried molecule; the
 * right-hand side lists the reactant molecules of the backward reaction.
 * Matching rules are returned ordered by descending score, ties keeping
 * file order, which is the contract clients rely on.
 */

import { readFileSync } from "fs";

export interface RewriteRule {
  lhs: string;
  rhs: string[];
  score: number;
}

export interface Reaction {
  reactants: string[];
  score: number;
}

export class RuleSet {
  private byLhs = new Map<string, RewriteRule[]>();

  constructor(rules: RewriteRule[]) {
    for (const rule of rules) {
      validateRule(rule);
      const bucket = this.byLhs.get(rule.lhs);
      if (bucket) {
        bucket.push(rule);
      } else {
        this.byLhs.set(rule.lhs, [rule]);
      }
    }
    for (const bucket of this.byLhs.values()) {
      bucket.sort((a, b) => b.score - a.score); // stable: ties keep file order
    }
  }

  static fromFile(path: string): RuleSet {
    let doc: unknown;
    try {
      doc = JSON.parse(readFileSync(path, "utf8"));
    } catch (err) {
      throw new Error(`unreadable rule file ${path}: ${err}`);
    }
    if (typeof doc !== "object" || doc === null || !Array.isArray((doc as any).rules)) {
      throw new Error(`rule file ${path} must contain a "rules" array`);
    }
    const rules = (doc as { rules: unknown[] }).rules.map((raw, i) => {
      const r = raw as Partial<RewriteRule>;
      if (
        typeof r.lhs !== "string" ||
        !Array.isArray(r.rhs) ||
        typeof r.score !== "number"
      ) {
        throw new Error(`rule ${i} is malformed`);
      }
      return { lhs: r.lhs, rhs: r.rhs.map(String), score: r.score };
    });
    return new RuleSet(rules);
  }

  propose(molecule: string): Reaction[] {
    const bucket = this.byLhs.get(molecule) ?? [];
    return bucket.map((rule) => ({ reactants: [...rule.rhs], score: rule.score }));
  }
}

function validateRule(rule: RewriteRule): void {
  if (!rule.lhs || rule.rhs.length === 0 || rule.rhs.some((m) => !m)) {
    throw new Error(`rule ${JSON.stringify(rule)} has empty molecules`);
  }
  if (rule.rhs.includes(rule.lhs)) {
    throw new Error(
      `rule ${JSON.stringify(rule)} lists its product among the reactants`
    );
  }
  if (!(rule.score >= 0 && rule.score <= 1)) {
    throw new Error(`rule score ${rule.score} outside [0, 1]`);
  }
}
