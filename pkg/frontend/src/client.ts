// WebSocket session client: owns the socket, funnels every event through
// the reducer, retries a failed command send once.

import { ClientMessage, parseServerMessage } from './protocol.js';
import { Action, ViewModel, initialViewModel, reduce } from './state.js';

export interface SessionInfo {
  session_id: string;
  wire: string;
  paused: boolean;
}

export async function createSession(base: string, body: Record<string, unknown>): Promise<SessionInfo> {
  const resp = await fetch(`${base}/sessions`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    const detail = await resp.text();
    throw new Error(`session creation failed (${resp.status}): ${detail}`);
  }
  return (await resp.json()) as SessionInfo;
}

export class SalmClient {
  private socket: WebSocket | null = null;
  private vm: ViewModel = initialViewModel();
  private listeners: ((vm: ViewModel) => void)[] = [];

  constructor(private readonly wsUrl: string) {}

  get viewModel(): ViewModel {
    return this.vm;
  }

  onChange(listener: (vm: ViewModel) => void): void {
    this.listeners.push(listener);
  }

  private dispatch(action: Action): void {
    this.vm = reduce(this.vm, action);
    for (const listener of this.listeners) listener(this.vm);
  }

  connect(): void {
    const socket = new WebSocket(this.wsUrl);
    this.socket = socket;
    socket.onopen = () => this.dispatch({ kind: 'socket', status: 'open' });
    socket.onclose = () => this.dispatch({ kind: 'socket', status: 'closed' });
    socket.onerror = () => this.dispatch({ kind: 'socket', status: 'error' });
    socket.onmessage = (event) => {
      const msg = parseServerMessage(String(event.data));
      if (msg) this.dispatch({ kind: 'message', message: msg });
    };
  }

  private sendRaw(msg: ClientMessage): boolean {
    if (!this.socket || this.socket.readyState !== WebSocket.OPEN) return false;
    try {
      this.socket.send(JSON.stringify(msg));
      return true;
    } catch {
      return false;
    }
  }

  send(msg: ClientMessage): void {
    this.sendRaw(msg);
  }

  submitCommand(text: string): void {
    const trimmed = text.trim();
    if (!trimmed) return;
    this.dispatch({ kind: 'submit', text: trimmed });
    if (!this.sendRaw({ type: 'command', text: trimmed })) {
      // one retry, then surface the failure on the chip
      setTimeout(() => {
        if (!this.sendRaw({ type: 'command', text: trimmed })) {
          this.dispatch({ kind: 'local_error', message: 'transport failure: command not sent' });
        }
      }, 250);
    }
  }
}
