#!/usr/bin/env node
/** modelserver --rules <path> [--tcp <port>]  (default transport: stdio) */

import { serveStdio, serveTcp } from "./server";
import { RuleSet } from "./rules";

function main(argv: string[]): number {
  let rulesPath: string | undefined;
  let tcpPort: number | undefined;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--rules") {
      rulesPath = argv[++i];
    } else if (argv[i] === "--tcp") {
      tcpPort = Number(argv[++i]);
    } else {
      process.stderr.write(`unknown argument: ${argv[i]}\n`);
      return 2;
    }
  }
  if (!rulesPath) {
    process.stderr.write("usage: modelserver --rules <path> [--tcp <port>]\n");
    return 2;
  }
  let ruleSet: RuleSet;
  try {
    ruleSet = RuleSet.fromFile(rulesPath);
  } catch (err) {
    process.stderr.write(`${err}\n`);
    return 1;
  }
  if (tcpPort !== undefined) {
    if (!Number.isInteger(tcpPort) || tcpPort < 1 || tcpPort > 65535) {
      process.stderr.write(`invalid TCP port: ${tcpPort}\n`);
      return 2;
    }
    serveTcp(ruleSet, tcpPort);
    return -1; // keep running until killed
  }
  void serveStdio(ruleSet);
  return -1;
}

const status = main(process.argv.slice(2));
if (status >= 0) {
  process.exit(status);
}
