/**
 * BridgeSession: one agent identity on one live connection, plus the
 * serving loop that feeds incoming mentions to a handler.
 *
 * The bridge carries no orchestration logic. A handler sees one message
 * at a time (strictly serial, in delivery order) and may answer with a
 * single reply into the same thread, or nothing.
 */

import { WireClient, type Endpoint } from "./client.js";
import {
  BridgeError,
  CONNECTION_LOST,
  THREAD_CLOSED,
  errorCode,
  type AgentRow,
  type Transcript,
  type WireMessage,
} from "./protocol.js";

export interface Reply {
  kind: string;
  body: string;
  mentions?: string[];
}

export type Handler = (
  message: WireMessage,
) => Reply | null | undefined | void | Promise<Reply | null | undefined | void>;

export interface ConnectOptions {
  observer?: boolean;
  handler?: Handler;
  /** Poll window for the serve loop; stop() takes effect within one. */
  idleTimeoutMs?: number;
}

export class BridgeSession {
  readonly agent: string;
  readonly endpoint: string | Endpoint;
  handler: Handler | null;
  idleTimeoutMs: number;
  private readonly client: WireClient;
  private stopRequested = false;

  constructor(
    client: WireClient,
    agent: string,
    endpoint: string | Endpoint,
    options: ConnectOptions,
  ) {
    this.client = client;
    this.agent = agent;
    this.endpoint = endpoint;
    this.handler = options.handler ?? null;
    this.idleTimeoutMs = options.idleTimeoutMs ?? 1000;
  }

  call(op: string, params: Record<string, unknown> = {}): Promise<unknown> {
    return this.client.call(op, params);
  }

  async listAgents(): Promise<AgentRow[]> {
    return (await this.call("list_agents")) as AgentRow[];
  }

  async createThread(participants: string[]): Promise<string> {
    const result = (await this.call("create_thread", { participants })) as {
      thread: string;
    };
    return result.thread;
  }

  async send(
    thread: string,
    kind: string,
    body: string,
    mentions: string[] = [],
  ): Promise<WireMessage> {
    return (await this.call("send_message", {
      thread,
      kind,
      body,
      mentions,
    })) as WireMessage;
  }

  async waitForMentions(options: { thread?: string; timeoutMs?: number } = {}): Promise<
    WireMessage[]
  > {
    const params: Record<string, unknown> = {};
    if (options.thread !== undefined) {
      params.thread = options.thread;
    }
    if (options.timeoutMs !== undefined) {
      params.timeout_ms = options.timeoutMs;
    }
    return (await this.call("wait_for_mentions", params)) as WireMessage[];
  }

  async getTranscript(thread: string): Promise<Transcript> {
    return (await this.call("get_transcript", { thread })) as Transcript;
  }

  async closeThread(thread: string, summary: string): Promise<void> {
    await this.call("close_thread", { thread, summary });
  }

  get stopped(): boolean {
    return this.stopRequested;
  }

  /** Ask a running serve loop to exit; it finishes the batch in hand first. */
  stop(): void {
    this.stopRequested = true;
  }

  close(): void {
    this.stopRequested = true;
    this.client.close();
  }
}

export async function bridgeConnect(
  endpoint: string | Endpoint,
  agentId: string,
  description: string,
  role = "worker",
  options: ConnectOptions = {},
): Promise<BridgeSession> {
  const client = await WireClient.connect(endpoint);
  const hello: Record<string, unknown> = { agent: agentId };
  if (options.observer) {
    hello.observer = true;
  } else {
    hello.description = description;
    hello.role = role;
  }
  try {
    await client.call("hello", hello);
  } catch (err) {
    client.close();
    throw err;
  }
  return new BridgeSession(client, agentId, endpoint, options);
}

/**
 * Run the mention loop until stop() or the connection drops.
 *
 * Delivery contract matches the primary SDK's loop: each mention reaches
 * the handler exactly once, in order; a handler throw is reported to the
 * originating thread as "handler-error: ..." when that thread still
 * accepts messages; a reply aimed at a thread that closed mid-loop is
 * dropped so the loop can drain the rest and go idle.
 */
export async function bridgeServe(session: BridgeSession, handler?: Handler): Promise<void> {
  const handle = handler ?? session.handler;
  if (!handle) {
    throw new BridgeError("BAD_REQUEST", "bridgeServe needs a handler");
  }
  while (!session.stopped) {
    let batch: WireMessage[];
    try {
      batch = await session.waitForMentions({ timeoutMs: session.idleTimeoutMs });
    } catch (err) {
      if (errorCode(err) === CONNECTION_LOST) {
        if (session.stopped) {
          return;
        }
        throw err;
      }
      throw err;
    }
    for (const message of batch) {
      await serveOne(session, handle, message);
    }
  }
}

async function serveOne(
  session: BridgeSession,
  handle: Handler,
  message: WireMessage,
): Promise<void> {
  let reply: Reply | null | undefined | void;
  try {
    reply = await handle(message);
  } catch (err) {
    const detail = err instanceof Error ? err.message : String(err);
    try {
      await session.send(message.thread, "system", `handler-error: ${detail}`);
    } catch {
      // Thread already closed; nowhere to report.
    }
    return;
  }
  if (!reply) {
    return;
  }
  try {
    await session.send(message.thread, reply.kind, reply.body, reply.mentions ?? []);
  } catch (err) {
    if (errorCode(err) !== THREAD_CLOSED) {
      throw err;
    }
  }
}
