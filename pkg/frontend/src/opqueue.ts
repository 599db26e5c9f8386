/**
 * Operation serializer.
 *
 * The session log on the server is ordered, so the client must never race
 * two ops: each one is sent only after the previous settled.  The queue
 * preserves submission order and keeps going after a failed op (the failure
 * reaches only its own caller).
 */

export class OpQueue<Op, Res> {
  private tail: Promise<unknown> = Promise.resolve();
  private inFlight = 0;

  constructor(private readonly send: (op: Op) => Promise<Res>) {}

  /** True while an op is on the wire (at most one, ever). */
  get busy(): boolean {
    return this.inFlight > 0;
  }

  enqueue(op: Op): Promise<Res> {
    const run = this.tail.then(
      () => this.dispatch(op),
      () => this.dispatch(op),
    );
    this.tail = run.catch(() => undefined);
    return run;
  }

  private async dispatch(op: Op): Promise<Res> {
    this.inFlight += 1;
    try {
      return await this.send(op);
    } finally {
      this.inFlight -= 1;
    }
  }
}
