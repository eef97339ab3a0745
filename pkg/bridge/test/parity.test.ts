/**
 * Cross-implementation parity: the same scenario driven once with the
 * primary SDK's echo worker (a Python subprocess) and once with a
 * bridge-hosted echo handler must leave identical transcripts, modulo
 * timestamps and the randomly assigned thread id.
 */

import { spawn } from "node:child_process";
import { once } from "node:events";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import {
  bridgeConnect,
  bridgeServe,
  type Transcript,
  type WireMessage,
} from "../src/index.js";
import { canonical, startServer, waitUntil } from "./helpers.js";

const ECHO_WORKER = path.join(path.dirname(fileURLToPath(import.meta.url)), "echo_worker.py");

interface ParityRecord {
  header: Record<string, unknown>;
  messages: Array<Record<string, unknown>>;
}

function project(transcript: Transcript): ParityRecord {
  return {
    header: {
      creator: transcript.creator,
      participants: transcript.participants,
      initial_participants: transcript.initial_participants,
      status: transcript.status,
      summary: transcript.summary,
    },
    messages: transcript.messages.map((m: WireMessage) => ({
      seq: m.seq,
      sender: m.sender,
      kind: m.kind,
      body: m.body,
      mentions: m.mentions,
    })),
  };
}

/** Drives the fixed choreography against a fresh server; the echo worker
 *  is whatever `startEcho` wires up, and `stopEcho` tears it down. */
async function runScenario(
  startEcho: (port: number) => Promise<() => Promise<void>>,
): Promise<ParityRecord> {
  const server = await startServer();
  try {
    const stopEcho = await startEcho(server.port);
    try {
      const driver = await bridgeConnect(
        { host: "127.0.0.1", port: server.port },
        "driver",
        "drives the parity scenario",
        "planner",
      );
      try {
        const tid = await driver.createThread(["echo"]);
        const settled = async (count: number) =>
          (await driver.getTranscript(tid)).messages.length >= count;

        await driver.send(tid, "chat", "please confirm", ["echo"]);
        await waitUntil(() => settled(2));
        await driver.send(tid, "chat", "second ping", ["echo"]);
        await waitUntil(() => settled(4));
        await driver.closeThread(tid, "parity run complete");
        return project(await driver.getTranscript(tid));
      } finally {
        driver.close();
      }
    } finally {
      await stopEcho();
    }
  } finally {
    await server.stop();
  }
}

describe("echo transcript parity", () => {
  it("bridge worker reproduces the primary SDK worker's transcript", async () => {
    const viaPrimary = await runScenario(async (port) => {
      const proc = spawn("python3", [ECHO_WORKER, String(port)], {
        stdio: ["ignore", "pipe", "inherit"],
      });
      await new Promise<void>((resolve, reject) => {
        proc.stdout.once("data", () => resolve());
        proc.once("exit", (code) => reject(new Error(`echo worker died (${code})`)));
      });
      return async () => {
        proc.kill("SIGKILL");
        await once(proc, "exit");
      };
    });

    const viaBridge = await runScenario(async (port) => {
      const echo = await bridgeConnect(
        { host: "127.0.0.1", port },
        "echo",
        "echoes mentions",
        "worker",
        { idleTimeoutMs: 100 },
      );
      const loop = bridgeServe(echo, (m) => ({ kind: "result", body: `echo: ${m.body}` }));
      return async () => {
        echo.stop();
        await loop;
        echo.close();
      };
    });

    expect(viaBridge.messages).toHaveLength(5);
    expect(canonical(viaBridge)).toBe(canonical(viaPrimary));
  }, 30_000);
});
