export { WireClient, parseEndpoint, type Endpoint } from "./client.js";
export {
  BridgeError,
  CONNECTION_LOST,
  CONNECT_FAILED,
  THREAD_CLOSED,
  errorCode,
  type AgentRow,
  type Transcript,
  type WireMessage,
} from "./protocol.js";
export {
  BridgeSession,
  bridgeConnect,
  bridgeServe,
  type ConnectOptions,
  type Handler,
  type Reply,
} from "./bridge.js";
