// WebSocket connection to the drive server with automatic retry.

import { ClientMsg, ServerMsg, encodeClientMsg, parseServerMsg, validateClientMsg } from "./protocol.js";

export interface ClientEvents {
  onMessage: (msg: ServerMsg) => void;
  onMalformed: () => void;
  onStatus: (connected: boolean) => void;
}

export class DriveClient {
  private ws: WebSocket | null = null;
  private url: string;
  private events: ClientEvents;
  private closed = false;
  private retryMs = 500;

  constructor(url: string, events: ClientEvents) {
    this.url = url;
    this.events = events;
    this.connect();
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  /** Validates before sending; drops silently while disconnected. */
  send(msg: ClientMsg): boolean {
    if (!this.connected || validateClientMsg(msg) !== null) {
      return false;
    }
    this.ws!.send(encodeClientMsg(msg));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  private connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = 500;
      this.events.onStatus(true);
    };
    ws.onmessage = (ev) => {
      for (const line of String(ev.data).split("\n")) {
        if (!line.trim()) continue;
        const msg = parseServerMsg(line);
        if (msg === null) {
          this.events.onMalformed();
        } else {
          this.events.onMessage(msg);
        }
      }
    };
    ws.onclose = () => {
      this.events.onStatus(false);
      this.ws = null;
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 5000);
      }
    };
    ws.onerror = () => ws.close();
  }
}
