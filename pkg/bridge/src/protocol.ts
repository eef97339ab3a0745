/**
 * Wire protocol shapes: newline-delimited JSON frames over TCP.
 *
 * Request:  {"id":<uint64>,"op":"<name>","params":{...}}
 * Response: {"id":<same>,"ok":true,"result":...}
 *        or {"id":<same>,"ok":false,"error":{"code":"...","message":"..."}}
 *
 * Responses may arrive out of request order (long polls overlap other
 * traffic on the same session); callers correlate by id.
 */

export interface WireMessage {
  seq: number;
  thread: string;
  sender: string;
  kind: string;
  body: string;
  mentions: string[];
  ts_ms: number;
}

export interface Transcript {
  thread: string;
  creator: string;
  participants: string[];
  initial_participants: string[];
  status: string;
  summary: string | null;
  messages: WireMessage[];
}

export interface AgentRow {
  id: string;
  description: string;
  role: string;
}

/** Error codes the client itself raises; the server defines the rest. */
export const CONNECT_FAILED = "CONNECT_FAILED";
export const CONNECTION_LOST = "CONNECTION_LOST";
export const THREAD_CLOSED = "THREAD_CLOSED";

export class BridgeError extends Error {
  readonly code: string;

  constructor(code: string, message: string) {
    super(`${code}: ${message}`);
    this.name = "BridgeError";
    this.code = code;
  }
}

export function errorCode(err: unknown): string | null {
  return err instanceof BridgeError ? err.code : null;
}
