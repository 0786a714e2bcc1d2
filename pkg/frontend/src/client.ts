/**
 * Session client: speaks the wire protocol over an injected byte stream
 * (a local socket bridge in the app, a net.Socket in tests).
 *
 * Outgoing edits carry client-proposed version numbers; the journal of
 * edits per version lets the editor transpose report ranges anchored to
 * older versions onto the current buffer. When the connection drops,
 * outgoing messages queue locally and an offline flag is raised.
 */

import {
  FrameDecoder,
  encodeMessage,
  encodeTree,
  parseAssigned,
  parseMessage,
  parseReportPayload,
  ReportEvent,
  TreeElem,
} from "./protocol.js";
import { Edit } from "./transpose.js";

export interface ByteStream {
  write(data: Uint8Array): void;
  onData(handler: (data: Uint8Array) => void): void;
  onClose(handler: () => void): void;
}

export interface NodeId {
  kind: "theory" | "auxiliary-file";
  path: string;
}

export interface ClientEvents {
  assigned?(version: number, spanExecs: Map<number, number>): void;
  status?(execId: number, state: string): void;
  report?(execId: number, node: string, events: ReportEvent[]): void;
  removedVersions?(versions: number[]): void;
  protocolError?(detail: string): void;
  offline?(): void;
}

function editToTree(node: NodeId, edit: Edit): TreeElem {
  const nodeProps: [string, string][] = [["kind", node.kind], ["path", node.path]];
  let child: TreeElem;
  switch (edit.kind) {
    case "insert":
      child = { name: "insert", props: [["offset", String(edit.offset)]], children: [edit.text] };
      break;
    case "remove":
      child = { name: "remove", props: [["offset", String(edit.offset)]], children: [edit.text] };
      break;
    case "set":
      child = { name: "set", props: [], children: [edit.text] };
      break;
    case "perspective":
      child = {
        name: "perspective",
        props: [["required", edit.required ? "1" : "0"]],
        children: edit.ranges.map(([lo, hi]) => ({
          name: "range",
          props: [["start", String(lo)], ["end", String(hi)]] as [string, string][],
          children: [],
        })),
      };
      break;
  }
  return { name: "node", props: nodeProps, children: [child] };
}

export class SessionClient {
  private decoder = new FrameDecoder();
  private nextVersion = 1;
  private queue: Uint8Array[] = [];
  offline = false;

  /** edits journaled per confirmed-or-proposed version, for transposition */
  readonly journal = new Map<number, { node: string; edit: Edit }[]>();
  /** the version each exec unit was created under */
  readonly execVersion = new Map<number, number>();
  latestVersion = 0;

  constructor(private stream: ByteStream, private events: ClientEvents) {
    stream.onData((data) => this.feed(data));
    stream.onClose(() => {
      this.offline = true;
      this.events.offline?.();
    });
  }

  private send(data: Uint8Array): void {
    if (this.offline) {
      this.queue.push(data);
      return;
    }
    try {
      this.stream.write(data);
    } catch {
      this.offline = true;
      this.queue.push(data);
      this.events.offline?.();
    }
  }

  sessionStart(name: string): void {
    this.send(encodeMessage("session_start", name));
  }

  sendEdits(edits: { node: NodeId; edit: Edit }[]): number {
    const version = this.nextVersion++;
    this.journal.set(
      version,
      edits
        .filter(({ edit }) => edit.kind === "insert" || edit.kind === "remove" || edit.kind === "set")
        .map(({ node, edit }) => ({ node: node.path, edit })),
    );
    const payload = encodeTree(edits.map(({ node, edit }) => editToTree(node, edit)));
    this.send(encodeMessage("node_edits", String(version), payload));
    return version;
  }

  dialogResult(id: string, value: string): void {
    this.send(encodeMessage("dialog_result", id, value));
  }

  /** Offset-affecting edits applied after `version`, for one node. */
  editsSince(version: number, nodePath: string): Edit[] {
    const out: Edit[] = [];
    for (const [v, entries] of this.journal) {
      if (v <= version) continue;
      for (const { node, edit } of entries) {
        if (node === nodePath) out.push(edit);
      }
    }
    return out;
  }

  private feed(data: Uint8Array): void {
    for (const chunks of this.decoder.feed(data)) {
      const msg = parseMessage(chunks);
      switch (msg.name) {
        case "assigned": {
          const version = parseInt(msg.args[0], 10);
          const spanExecs = parseAssigned(msg.args[1]);
          for (const execId of spanExecs.values()) {
            if (!this.execVersion.has(execId)) this.execVersion.set(execId, version);
          }
          this.latestVersion = Math.max(this.latestVersion, version);
          this.events.assigned?.(version, spanExecs);
          break;
        }
        case "status":
          this.events.status?.(parseInt(msg.args[0], 10), msg.args[1]);
          break;
        case "report":
          this.events.report?.(
            parseInt(msg.args[0], 10), msg.args[1], parseReportPayload(msg.args[2]));
          break;
        case "removed_versions": {
          const versions = msg.args[0].split(",").filter(Boolean).map((v) => parseInt(v, 10));
          for (const v of versions) this.journal.delete(v);
          this.events.removedVersions?.(versions);
          break;
        }
        case "protocol_error":
          this.events.protocolError?.(msg.args[0] ?? "");
          break;
        default:
          this.events.protocolError?.(`unexpected server message ${msg.name}`);
      }
    }
  }
}
