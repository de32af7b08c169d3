/**
 * Line protocol: one JSON request per line, one JSON response per line.
 *
 *   request:  {"id": <integer>, "molecule": <string>}
 *   response: {"id": <integer>, "reactions": [{"reactants": [...], "score": n}, ...]}
 *
 * Responses echo the request id and order reactions by descending score.
 * Malformed request lines produce {"id": null, "error": "..."} and never
 * stop the server.
 */

import { RuleSet } from "./rules";

export function handleLine(ruleSet: RuleSet, line: string): string {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    return JSON.stringify({ id: null, error: "request is not a JSON object" });
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    return JSON.stringify({ id: null, error: "request must be a JSON object" });
  }
  const req = doc as { id?: unknown; molecule?: unknown };
  if (!Number.isInteger(req.id)) {
    return JSON.stringify({ id: null, error: "request id must be an integer" });
  }
  if (typeof req.molecule !== "string" || req.molecule.length === 0) {
    return JSON.stringify({ id: null, error: "molecule must be a nonempty string" });
  }
  const reactions = ruleSet.propose(req.molecule);
  return JSON.stringify({ id: req.id, reactions });
}
