// Page wiring: create a session, connect the socket, paint on every change.

import { SalmClient, createSession } from './client.js';
import { renderFrame } from './render.js';
import { describePoint, pointAt, renderWeights } from './weights.js';

const worldCanvas = document.getElementById('world') as HTMLCanvasElement;
const weightsCanvas = document.getElementById('weights') as HTMLCanvasElement;
const banner = document.getElementById('banner') as HTMLDivElement;
const feed = document.getElementById('feed') as HTMLUListElement;
const chips = document.getElementById('chips') as HTMLDivElement;
const commandInput = document.getElementById('command') as HTMLInputElement;
const hover = document.getElementById('hover') as HTMLDivElement;

function query(name: string, fallback: string): string {
  return new URLSearchParams(location.search).get(name) ?? fallback;
}

async function boot(): Promise<void> {
  const base = query('server', `${location.protocol}//${location.host}`);
  const session = await createSession(base, {
    seed: Number(query('seed', '7')),
    task: query('task', 'p2p'),
    planner: query('planner', 'SALM'),
    backend: query('backend', 'mock'),
    n_pedestrians: Number(query('pedestrians', '10')),
    rate: Number(query('rate', '4')),
  });
  const wsBase = base.replace(/^http/, 'ws');
  const client = new SalmClient(`${wsBase}/sessions/${session.session_id}/ws`);

  client.onChange((vm) => {
    renderFrame(worldCanvas, vm);
    renderWeights(weightsCanvas, vm);
    if (vm.wireMismatch) {
      banner.textContent = `wire schema mismatch: server speaks ${vm.wireMismatch}`;
      banner.className = 'banner fatal';
    } else if (vm.seqGap) {
      banner.textContent = 'warning: missed messages (sequence gap)';
      banner.className = 'banner warn';
    } else if (vm.connection !== 'open') {
      banner.textContent = `connection ${vm.connection}`;
      banner.className = 'banner warn';
    } else if (vm.outcome) {
      banner.textContent = `episode finished: ${vm.outcome}`;
      banner.className = 'banner done';
    } else {
      banner.textContent = `${vm.paused ? 'paused' : 'running'} · guidance v${vm.guidanceVersion} · d=${vm.socialDistance.toFixed(1)} m`;
      banner.className = 'banner';
    }
    chips.replaceChildren(
      ...vm.chips.slice(-6).map((chip) => {
        const el = document.createElement('span');
        el.className = `chip ${chip.status}`;
        el.textContent = chip.text;
        if (chip.detail) el.title = chip.detail;
        return el;
      }),
    );
    feed.replaceChildren(
      ...vm.feed.slice(-8).map((line) => {
        const li = document.createElement('li');
        li.textContent = line;
        return li;
      }),
    );
  });
  client.connect();

  (document.getElementById('start') as HTMLButtonElement).onclick = () => client.send({ type: 'start' });
  (document.getElementById('pause') as HTMLButtonElement).onclick = () => client.send({ type: 'pause' });
  (document.getElementById('resume') as HTMLButtonElement).onclick = () => client.send({ type: 'resume' });
  commandInput.addEventListener('keydown', (event) => {
    if (event.key === 'Enter') {
      client.submitCommand(commandInput.value);
      commandInput.value = '';
    }
  });
  weightsCanvas.addEventListener('mousemove', (event) => {
    const point = pointAt(client.viewModel, weightsCanvas, event.offsetX);
    hover.textContent = point ? describePoint(point) : '';
  });
}

boot().catch((err) => {
  banner.textContent = `failed to start: ${err}`;
  banner.className = 'banner fatal';
});
