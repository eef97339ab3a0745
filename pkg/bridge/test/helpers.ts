/**
 * Spawns the coordination server (`python3 -m parley.cli serve`) for
 * black-box tests and tears it down again. Requires the parley package
 * on the Python path (editable install from the repository root).
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import type { Readable } from "node:stream";
import { once } from "node:events";

export interface LiveServer {
  port: number;
  proc: ChildProcessByStdio<null, Readable, Readable>;
  stop: () => Promise<void>;
}

export async function startServer(extraArgs: string[] = []): Promise<LiveServer> {
  const env = { ...process.env };
  delete env.CORAL_LISTEN;
  const proc = spawn(
    "python3",
    ["-m", "parley.cli", "serve", "--listen", "127.0.0.1:0", ...extraArgs],
    { env, stdio: ["ignore", "pipe", "pipe"] },
  );
  const port = await new Promise<number>((resolve, reject) => {
    let banner = "";
    const onData = (chunk: Buffer) => {
      banner += chunk.toString("utf8");
      const line = banner.split("\n")[0];
      if (banner.includes("\n") && line) {
        proc.stdout.off("data", onData);
        const match = /^listening on .*:(\d+)$/.exec(line.trim());
        if (match && match[1]) {
          resolve(Number(match[1]));
        } else {
          reject(new Error(`unexpected server banner: ${line}`));
        }
      }
    };
    proc.stdout.on("data", onData);
    proc.once("exit", (code) => reject(new Error(`server exited early (${code})`)));
  });
  return {
    port,
    proc,
    stop: async () => {
      if (proc.exitCode === null) {
        proc.kill("SIGINT");
        await once(proc, "exit");
      }
    },
  };
}

/** JSON with recursively sorted keys, no whitespace: canonical comparison form. */
export function canonical(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export async function waitUntil(
  probe: () => Promise<boolean>,
  { timeoutMs = 10_000, stepMs = 25 } = {},
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await probe()) {
      return;
    }
    await new Promise((r) => setTimeout(r, stepMs));
  }
  throw new Error("waitUntil: condition not reached in time");
}
