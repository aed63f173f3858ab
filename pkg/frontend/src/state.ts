// Pure view-model reducer. Every rendered value originates from a received
// wire message; the client never simulates.

import {
  GotSummary,
  GuidanceDoc,
  ServerMessage,
  StateUpdate,
  WIRE_VERSION,
  WorldRecord,
} from './protocol.js';

export type ConnectionStatus = 'connecting' | 'open' | 'closed' | 'error';
export type ChipStatus = 'pending' | 'applied' | 'error';

export interface CommandChip {
  text: string;
  status: ChipStatus;
  detail?: string;
}

export interface WeightPoint {
  step: number;
  s1: number;
  s2: number;
  got?: GotSummary;
}

export interface ViewModel {
  connection: ConnectionStatus;
  wireMismatch: string | null;
  snapshot: WorldRecord | null;
  target: [number, number] | null;
  socialDistance: number;
  guidanceVersion: number;
  guidance: GuidanceDoc | null;
  status: string;
  paused: boolean;
  trail: [number, number][];
  weights: WeightPoint[];
  chips: CommandChip[];
  feed: string[];
  lastSeq: number | null;
  seqGap: boolean;
  outcome: string | null;
}

export const TRAIL_LENGTH = 80;
const FEED_LENGTH = 50;

export function initialViewModel(): ViewModel {
  return {
    connection: 'connecting',
    wireMismatch: null,
    snapshot: null,
    target: null,
    socialDistance: 0.4,
    guidanceVersion: 0,
    guidance: null,
    status: 'running',
    paused: true,
    trail: [],
    weights: [],
    chips: [],
    feed: [],
    lastSeq: null,
    seqGap: false,
    outcome: null,
  };
}

export type Action =
  | { kind: 'socket'; status: ConnectionStatus }
  | { kind: 'message'; message: ServerMessage }
  | { kind: 'submit'; text: string }
  | { kind: 'local_error'; message: string };

function pushFeed(feed: string[], line: string): string[] {
  return [...feed.slice(-(FEED_LENGTH - 1)), line];
}

function trackSeq(vm: ViewModel, seq: number): Pick<ViewModel, 'lastSeq' | 'seqGap'> {
  const gap = vm.lastSeq !== null && seq !== vm.lastSeq + 1;
  return { lastSeq: seq, seqGap: vm.seqGap || gap };
}

function resolveChip(chips: CommandChip[], status: ChipStatus, detail?: string): CommandChip[] {
  const index = chips.findIndex((c) => c.status === 'pending');
  if (index < 0) return chips;
  const next = chips.slice();
  next[index] = { ...next[index], status, detail };
  return next;
}

function applyState(vm: ViewModel, msg: StateUpdate): ViewModel {
  const robot = msg.state.robot.pos;
  const point =
    msg.weights && msg.weights.length === 2
      ? [{ step: msg.state.t, s1: msg.weights[0], s2: msg.weights[1] }]
      : [];
  return {
    ...vm,
    ...trackSeq(vm, msg.seq),
    wireMismatch: msg.wire === WIRE_VERSION ? vm.wireMismatch : msg.wire,
    snapshot: msg.state,
    target: msg.target,
    socialDistance: msg.social_distance,
    guidanceVersion: msg.guidance_version,
    status: msg.status,
    paused: msg.paused,
    trail: [...vm.trail.slice(-(TRAIL_LENGTH - 1)), robot],
    weights: [...vm.weights, ...point],
  };
}

export function reduce(vm: ViewModel, action: Action): ViewModel {
  if (action.kind === 'socket') {
    return { ...vm, connection: action.status };
  }
  if (action.kind === 'submit') {
    return { ...vm, chips: [...vm.chips, { text: action.text, status: 'pending' }] };
  }
  if (action.kind === 'local_error') {
    return {
      ...vm,
      chips: resolveChip(vm.chips, 'error', action.message),
      feed: pushFeed(vm.feed, `error: ${action.message}`),
    };
  }
  const msg = action.message;
  switch (msg.type) {
    case 'state_update':
      return applyState(vm, msg);
    case 'guidance_update':
      return {
        ...vm,
        ...trackSeq(vm, msg.seq),
        guidance: msg.guidance,
        socialDistance: msg.guidance.social_distance,
        guidanceVersion: msg.guidance.version,
        chips: resolveChip(vm.chips, 'applied'),
        feed: pushFeed(vm.feed, `guidance v${msg.guidance.version}: d=${msg.guidance.social_distance}`),
      };
    case 'got_summary': {
      const weights = vm.weights.slice();
      for (let i = weights.length - 1; i >= 0; i--) {
        if (weights[i].step === msg.step) {
          weights[i] = { ...weights[i], got: msg };
          break;
        }
      }
      return { ...vm, ...trackSeq(vm, msg.seq), weights };
    }
    case 'episode_end':
      return {
        ...vm,
        ...trackSeq(vm, msg.seq),
        outcome: msg.outcome,
        feed: pushFeed(vm.feed, `episode ${msg.outcome} after ${msg.nav_time.toFixed(1)}s`),
      };
    case 'error':
      return {
        ...vm,
        ...trackSeq(vm, msg.seq),
        chips: msg.code === 'command_rejected' ? resolveChip(vm.chips, 'error', msg.message) : vm.chips,
        feed: pushFeed(vm.feed, `error: ${msg.message}`),
      };
    case 'ack':
      return { ...vm, ...trackSeq(vm, msg.seq) };
    default:
      return vm;
  }
}
