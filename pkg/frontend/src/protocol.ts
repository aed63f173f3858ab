// Wire protocol "salm-wire/1" spoken by the session service.

export const WIRE_VERSION = 'salm-wire/1';

export interface AgentRecord {
  id: number;
  kind: 'robot' | 'user' | 'pedestrian';
  pos: [number, number];
  vel: [number, number];
  radius: number;
  goal: [number, number];
  v_pref: number;
  heading: number;
}

export interface WorldRecord {
  t: number;
  robot: AgentRecord;
  user: AgentRecord | null;
  pedestrians: AgentRecord[];
  events: { type: string; [key: string]: unknown }[];
}

export interface StateUpdate {
  type: 'state_update';
  wire: string;
  session: string;
  seq: number;
  state: WorldRecord;
  target: [number, number];
  social_distance: number;
  guidance_version: number;
  status: 'running' | 'success' | 'collision' | 'timeout';
  paused: boolean;
  weights?: [number, number] | null;
  action?: [number, number];
  reward?: number;
}

export interface GuidanceDoc {
  task: 'p2p' | 'hf';
  target: [number, number] | null;
  social_distance: number;
  norm: 'pedestrian_first' | 'robot_first';
  stop_distance: number;
  version: number;
}

export interface GuidanceUpdate {
  type: 'guidance_update';
  wire: string;
  session: string;
  seq: number;
  guidance: GuidanceDoc;
}

export interface GotSummary {
  type: 'got_summary';
  session: string;
  seq: number;
  step: number;
  s1: number | null;
  s2: number | null;
  vertex_count: number;
}

export interface EpisodeEnd {
  type: 'episode_end';
  session: string;
  seq: number;
  outcome: string;
  nav_time: number;
  steps: number;
  discomfort_fraction: number;
}

export interface ErrorMessage {
  type: 'error';
  session: string;
  seq: number;
  code: string;
  message: string;
}

export interface Ack {
  type: 'ack';
  session: string;
  seq: number;
  command: string;
}

export type ServerMessage =
  | StateUpdate
  | GuidanceUpdate
  | GotSummary
  | EpisodeEnd
  | ErrorMessage
  | Ack;

export type ClientMessage =
  | { type: 'start' }
  | { type: 'pause' }
  | { type: 'resume' }
  | { type: 'set_rate'; rate: number }
  | { type: 'command'; text: string };

export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== 'object' || doc === null) return null;
  const type = (doc as { type?: unknown }).type;
  if (
    type === 'state_update' ||
    type === 'guidance_update' ||
    type === 'got_summary' ||
    type === 'episode_end' ||
    type === 'error' ||
    type === 'ack'
  ) {
    return doc as ServerMessage;
  }
  return null;
}
