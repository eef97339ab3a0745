/**
 * One TCP connection speaking the NDJSON request/response protocol.
 *
 * Every call gets a fresh id and resolves when the matching response
 * frame lands, so a long-poll in flight never blocks other calls on the
 * same socket. A dropped connection rejects everything pending with
 * CONNECTION_LOST and poisons later calls the same way.
 */

import * as net from "node:net";
import { BridgeError, CONNECTION_LOST, CONNECT_FAILED } from "./protocol.js";

interface Pending {
  resolve: (value: unknown) => void;
  reject: (reason: BridgeError) => void;
}

export interface Endpoint {
  host: string;
  port: number;
}

export function parseEndpoint(endpoint: string | Endpoint): Endpoint {
  if (typeof endpoint !== "string") {
    return endpoint;
  }
  const cut = endpoint.lastIndexOf(":");
  const port = Number(endpoint.slice(cut + 1));
  if (cut <= 0 || !Number.isInteger(port)) {
    throw new BridgeError(CONNECT_FAILED, `bad endpoint ${endpoint}`);
  }
  return { host: endpoint.slice(0, cut), port };
}

export class WireClient {
  private readonly socket: net.Socket;
  private readonly pending = new Map<number, Pending>();
  private nextId = 1;
  private buffer = "";
  private lost: BridgeError | null = null;
  /** True once close() was asked for, so the drop is not an error. */
  closing = false;

  private constructor(socket: net.Socket) {
    this.socket = socket;
    socket.setNoDelay(true);
    socket.on("data", (chunk) => this.feed(chunk.toString("utf8")));
    socket.on("error", () => undefined);
    socket.on("close", () => this.abandon("connection closed"));
  }

  static connect(endpoint: string | Endpoint, timeoutMs = 10_000): Promise<WireClient> {
    const { host, port } = parseEndpoint(endpoint);
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host, port });
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new BridgeError(CONNECT_FAILED, `${host}:${port}: connect timeout`));
      }, timeoutMs);
      socket.once("error", (err) => {
        clearTimeout(timer);
        reject(new BridgeError(CONNECT_FAILED, `${host}:${port}: ${err.message}`));
      });
      socket.once("connect", () => {
        clearTimeout(timer);
        socket.removeAllListeners("error");
        resolve(new WireClient(socket));
      });
    });
  }

  call(op: string, params: Record<string, unknown> = {}): Promise<unknown> {
    if (this.lost) {
      return Promise.reject(this.lost);
    }
    const id = this.nextId++;
    const frame = `${JSON.stringify({ id, op, params })}\n`;
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.socket.write(frame);
    });
  }

  close(): void {
    this.closing = true;
    this.socket.destroy();
  }

  private feed(text: string): void {
    this.buffer += text;
    let cut: number;
    while ((cut = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 1);
      if (line.trim() === "") {
        continue;
      }
      this.dispatch(line);
    }
  }

  private dispatch(line: string): void {
    let frame: { id?: number; ok?: boolean; result?: unknown; error?: { code: string; message: string } };
    try {
      frame = JSON.parse(line);
    } catch {
      this.abandon(`unparseable frame: ${line.slice(0, 80)}`);
      return;
    }
    const waiter = typeof frame.id === "number" ? this.pending.get(frame.id) : undefined;
    if (!waiter) {
      return;
    }
    this.pending.delete(frame.id as number);
    if (frame.ok) {
      waiter.resolve(frame.result);
    } else {
      const err = frame.error ?? { code: "BAD_REQUEST", message: "malformed error frame" };
      waiter.reject(new BridgeError(err.code, err.message));
    }
  }

  private abandon(reason: string): void {
    if (this.lost) {
      return;
    }
    this.lost = new BridgeError(CONNECTION_LOST, reason);
    for (const waiter of this.pending.values()) {
      waiter.reject(this.lost);
    }
    this.pending.clear();
    this.socket.destroy();
  }
}
