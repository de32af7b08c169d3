/**
 * Serving loops: standard streams (default) or a TCP listener.
 *
 * One request is handled at a time per connection, in arrival order;
 * the server is stateless between requests and survives arbitrary input.
 */

import { createInterface } from "readline";
import { createServer, Server } from "net";

import { handleLine } from "./protocol";
import { RuleSet } from "./rules";

export function serveStdio(ruleSet: RuleSet): Promise<void> {
  return new Promise((resolve) => {
    const lines = createInterface({ input: process.stdin, terminal: false });
    lines.on("line", (line) => {
      process.stdout.write(handleLine(ruleSet, line) + "\n");
    });
    lines.on("close", resolve);
  });
}

export function serveTcp(ruleSet: RuleSet, port: number): Server {
  const server = createServer((socket) => {
    const lines = createInterface({ input: socket, terminal: false });
    lines.on("line", (line) => {
      socket.write(handleLine(ruleSet, line) + "\n");
    });
    socket.on("error", () => socket.destroy()); // a dropped client is not fatal
  });
  server.listen(port);
  return server;
}
