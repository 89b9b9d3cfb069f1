// Demonstration replay: parse the JSON-lines demo format and expose a
// play/pause/scrub cursor over the recorded poses.

export interface ReplayStep {
  t: number;
  x: number;
  y: number;
  heading: number;
  speed: number;
  steer: number;
  lon: number;
}

export interface ReplayEpisode {
  ep: number;
  scenario: string;
  seed: number;
  source: string;
  steps: ReplayStep[];
}

export function parseDemoFile(text: string): ReplayEpisode[] {
  const episodes: ReplayEpisode[] = [];
  let current: ReplayEpisode | null = null;
  for (const line of text.split("\n")) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    let obj: any;
    try {
      obj = JSON.parse(trimmed);
    } catch {
      continue;
    }
    if (obj.obs !== undefined) {
      if (current === null) continue; // step before any header: skip
      current.steps.push({
        t: obj.t,
        x: obj.x,
        y: obj.y,
        heading: obj.heading,
        speed: obj.speed,
        steer: obj.steer,
        lon: obj.lon,
      });
    } else if (typeof obj.ep === "number" && typeof obj.scenario === "string") {
      current = {
        ep: obj.ep,
        scenario: obj.scenario,
        seed: obj.seed ?? 0,
        source: obj.source ?? "unknown",
        steps: [],
      };
      episodes.push(current);
    }
  }
  return episodes.filter((e) => e.steps.length > 0);
}

export class ReplayCursor {
  readonly episode: ReplayEpisode;
  index = 0;
  playing = false;

  constructor(episode: ReplayEpisode) {
    this.episode = episode;
  }

  get length(): number {
    return this.episode.steps.length;
  }

  current(): ReplayStep {
    return this.episode.steps[this.index];
  }

  play(): void {
    this.playing = true;
  }

  pause(): void {
    this.playing = false;
  }

  /** Advance one recorded step while playing; stops at the end. */
  advance(): void {
    if (!this.playing) return;
    if (this.index + 1 >= this.length) {
      this.playing = false;
      return;
    }
    this.index += 1;
  }

  /** Scrub to a fraction of the episode in [0, 1]. */
  seek(fraction: number): void {
    const f = Math.min(Math.max(fraction, 0), 1);
    this.index = Math.min(this.length - 1, Math.round(f * (this.length - 1)));
  }
}
