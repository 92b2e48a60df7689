// Fixed-cadence teleoperation pad. While at least one axis is held the
// scheduler emits one incremental command per tick (default 20 Hz, dt 0.05 s);
// released axes contribute nothing and key auto-repeat cannot raise the rate
// because presses are idempotent and only the interval timer emits.

export interface TeleopCommand {
  v_h: number[];
  dt: number;
  gamma: number;
  m: number;
}

export interface CommandParams {
  gamma: number;
  m: number;
}

export interface SchedulerOptions {
  dof: number;
  /** Commands per second while held. */
  rateHz?: number;
  /** Magnitude an individual held axis contributes to v_h, units/s. */
  axisSpeed?: number;
  /** Sampled at every tick so slider moves apply to the next command. */
  params: () => CommandParams;
}

export class CommandScheduler {
  readonly dof: number;
  readonly rateHz: number;
  readonly dt: number;
  readonly axisSpeed: number;

  private readonly send: (cmd: TeleopCommand) => void;
  private readonly params: () => CommandParams;
  private readonly held = new Map<number, 1 | -1>();
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(send: (cmd: TeleopCommand) => void, options: SchedulerOptions) {
    this.send = send;
    this.dof = options.dof;
    this.rateHz = options.rateHz ?? 20;
    this.dt = 1 / this.rateHz;
    this.axisSpeed = options.axisSpeed ?? 0.1;
    this.params = options.params;
    if (this.dof < 1 || this.rateHz <= 0) {
      throw new RangeError("scheduler needs dof >= 1 and a positive rate");
    }
  }

  get active(): boolean {
    return this.held.size > 0;
  }

  /**
   * Start driving an axis. Returns false (and emits nothing) when the axis
   * is out of range or the blend slider has handed control to autonomy.
   */
  press(axis: number, direction: 1 | -1): boolean {
    if (axis < 0 || axis >= this.dof) {
      return false;
    }
    if (this.params().m >= 1.0) {
      return false;
    }
    this.held.set(axis, direction);
    if (this.timer === null) {
      this.timer = setInterval(() => this.tick(), 1000 / this.rateHz);
    }
    return true;
  }

  release(axis: number): void {
    this.held.delete(axis);
    if (this.held.size === 0) {
      this.stop();
    }
  }

  releaseAll(): void {
    this.held.clear();
    this.stop();
  }

  private stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One cadence step; only the interval timer calls this. */
  private tick(): void {
    if (this.held.size === 0) {
      return;
    }
    const { gamma, m } = this.params();
    if (m >= 1.0) {
      // Slider reached full autonomy mid-hold: the pad goes quiet.
      this.releaseAll();
      return;
    }
    const v_h = new Array<number>(this.dof).fill(0);
    for (const [axis, direction] of this.held) {
      v_h[axis] = direction * this.axisSpeed;
    }
    this.send({ v_h, dt: this.dt, gamma, m });
  }
}
