/** Public surface of the front-end component. */

import { ByteStream, NodeId, SessionClient } from "./client.js";
import { EditorModel, EditorOptions } from "./editor.js";

export { FrameDecoder, encodeMessage, encodeChunks, parseMessage, decodeTree,
         encodeTree, formatPretty, unbroken, parseReportPayload,
         parseAssigned } from "./protocol.js";
export type { ReportEvent, DiagnosticMessage, MarkupReport, PrettyTree,
              TreeElem, TreeItem } from "./protocol.js";
export { transposeOffset, transposeRange, diffEdits, applyEdit } from "./transpose.js";
export type { Edit } from "./transpose.js";
export { SessionClient } from "./client.js";
export type { ByteStream, NodeId, ClientEvents } from "./client.js";
export { EditorModel } from "./editor.js";
export type { Decoration, EditorOptions } from "./editor.js";
export { EditorView } from "./view.js";

/**
 * Bind a byte stream (the local socket bridge) to an editor model for one
 * document node; server events flow into the model, edits flow back.
 */
export function createSession(stream: ByteStream, node: NodeId,
                              options: EditorOptions = {},
                              session = "interactive"):
    { client: SessionClient; model: EditorModel } {
  let model: EditorModel | null = null;
  const client = new SessionClient(stream, {
    assigned: (v, m) => model?.handleAssigned(v, m),
    status: (e, s) => model?.handleStatus(e, s),
    report: (e, n, evs) => model?.handleReport(e, n, evs),
    offline: () => model?.handleOffline(),
  });
  model = new EditorModel(client, node, options);
  client.sessionStart(session);
  return { client, model };
}
