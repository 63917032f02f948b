// Line codec for the instrument's serial protocol: 22-field output frames
// and single-letter command lines. Mirrors the device grammar; the golden
// strings in the tests pin byte-for-byte agreement.

export const ALLOWED_GAINS = [0, 1, 2, 4, 8, 16, 32, 64] as const;
export const UNDERSAMPLING_VALUES = [0, 0.5, 1, 2, 4, 8, 16] as const;
export const FREQUENCY_RANGE_HZ: readonly [number, number] = [1, 50000];
export const TIME_CONSTANT_RANGE_S: readonly [number, number] = [0.01, 10];
export const OUTPUT_GAIN_RANGE: readonly [number, number] = [0, 1e6];
export const MIN_HARMONIC = 2;
export const FRAME_FIELD_COUNT = 22;

export class ProtocolError extends Error {}

export interface OutputFrame {
  error: number; // bit 1 clipping, bit 2 lock failure
  outputGain: number;
  inputGain: number;
  syncOn: boolean;
  externalOn: boolean;
  samplesPerPeriod: number;
  sampleRateHz: number;
  referenceHz: number;
  timeConstantS: number;
  undersampling: number;
  r1: number; // mV
  phi1: number; // radians
  s1: number; // mV
  x1: number;
  y1: number;
  xN: number;
  xN1: number;
  xN2: number;
  yN: number;
  yN1: number;
  yN2: number;
  lowestHarmonic: number;
}

const INT_RE = /^[+-]?\d+$/;

function parseIntField(token: string, name: string): number {
  if (!INT_RE.test(token)) {
    throw new ProtocolError(`field ${name}: ${token} is not an integer`);
  }
  return parseInt(token, 10);
}

function parseFloatField(token: string, name: string): number {
  const value = Number(token);
  if (token.trim() === "" || Number.isNaN(value)) {
    throw new ProtocolError(`field ${name}: ${token} is not a number`);
  }
  return value;
}

function parseFlag(token: string, name: string): boolean {
  if (token !== "0" && token !== "1") {
    throw new ProtocolError(`field ${name}: ${token} is not 0 or 1`);
  }
  return token === "1";
}

export function validateFrame(frame: OutputFrame): void {
  if (![0, 1, 2, 3].includes(frame.error)) {
    throw new ProtocolError(`error indicator ${frame.error} not in 0..3`);
  }
  if (!(ALLOWED_GAINS as readonly number[]).includes(frame.inputGain)) {
    throw new ProtocolError(`input gain ${frame.inputGain} not allowed`);
  }
  if (
    frame.outputGain < OUTPUT_GAIN_RANGE[0] ||
    frame.outputGain > OUTPUT_GAIN_RANGE[1]
  ) {
    throw new ProtocolError(`output gain ${frame.outputGain} out of range`);
  }
  if (!(UNDERSAMPLING_VALUES as readonly number[]).includes(frame.undersampling)) {
    throw new ProtocolError(`undersampling ${frame.undersampling} not allowed`);
  }
  if ((frame.undersampling === 0) !== !frame.externalOn) {
    throw new ProtocolError(
      "undersampling must be 0 exactly in internal reference mode",
    );
  }
  if (frame.r1 < 0) {
    throw new ProtocolError(`total amplitude ${frame.r1} negative`);
  }
  if (frame.lowestHarmonic < MIN_HARMONIC) {
    throw new ProtocolError(
      `lowest higher harmonic ${frame.lowestHarmonic} below ${MIN_HARMONIC}`,
    );
  }
}

export function parseFrame(line: string): OutputFrame {
  const tokens = line.trim().split(/\s+/);
  if (tokens.length !== FRAME_FIELD_COUNT) {
    throw new ProtocolError(
      `expected ${FRAME_FIELD_COUNT} fields, got ${tokens.length}`,
    );
  }
  const frame: OutputFrame = {
    error: parseIntField(tokens[0], "error"),
    outputGain: parseFloatField(tokens[1], "output_gain"),
    inputGain: parseIntField(tokens[2], "input_gain"),
    syncOn: parseFlag(tokens[3], "sync_on"),
    externalOn: parseFlag(tokens[4], "external_on"),
    samplesPerPeriod: parseIntField(tokens[5], "samples_per_period"),
    sampleRateHz: parseFloatField(tokens[6], "sample_rate_hz"),
    referenceHz: parseFloatField(tokens[7], "reference_hz"),
    timeConstantS: parseFloatField(tokens[8], "time_constant_s"),
    undersampling: parseFloatField(tokens[9], "undersampling"),
    r1: parseFloatField(tokens[10], "r1"),
    phi1: parseFloatField(tokens[11], "phi1"),
    s1: parseFloatField(tokens[12], "s1"),
    x1: parseFloatField(tokens[13], "x1"),
    y1: parseFloatField(tokens[14], "y1"),
    xN: parseFloatField(tokens[15], "x_n"),
    xN1: parseFloatField(tokens[16], "x_n1"),
    xN2: parseFloatField(tokens[17], "x_n2"),
    yN: parseFloatField(tokens[18], "y_n"),
    yN1: parseFloatField(tokens[19], "y_n1"),
    yN2: parseFloatField(tokens[20], "y_n2"),
    lowestHarmonic: parseIntField(tokens[21], "lowest_harmonic"),
  };
  validateFrame(frame);
  return frame;
}

function formatUndersampling(n: number): string {
  if (n === 0) return "0";
  if (n === 0.5) return "0.5";
  return String(Math.trunc(n));
}

export function formatFrame(frame: OutputFrame): string {
  validateFrame(frame);
  const parts = [
    String(frame.error),
    frame.outputGain.toFixed(2),
    String(frame.inputGain),
    frame.syncOn ? "1" : "0",
    frame.externalOn ? "1" : "0",
    String(frame.samplesPerPeriod),
    frame.sampleRateHz.toFixed(2),
    frame.referenceHz.toFixed(2),
    frame.timeConstantS.toFixed(2),
    formatUndersampling(frame.undersampling),
    frame.r1.toFixed(5),
    frame.phi1.toFixed(5),
    frame.s1.toFixed(5),
    frame.x1.toFixed(5),
    frame.y1.toFixed(5),
    frame.xN.toFixed(5),
    frame.xN1.toFixed(5),
    frame.xN2.toFixed(5),
    frame.yN.toFixed(5),
    frame.yN1.toFixed(5),
    frame.yN2.toFixed(5),
    String(frame.lowestHarmonic),
  ];
  return parts.join(" ") + "\r\n";
}

// -- command builders (one protocol line per control change) ---------------

function formatNumber(value: number): string {
  // plain decimal form; the device parses standard floats
  return String(value);
}

export function toggleSyncCommand(): string {
  return "t";
}

export function toggleReferenceCommand(): string {
  return "r";
}

export function queryFrequencyCommand(): string {
  return "c";
}

export function frequencyCommand(hz: number): string {
  const [lo, hi] = FREQUENCY_RANGE_HZ;
  if (!(hz >= lo && hz <= hi)) {
    throw new ProtocolError(`reference frequency ${hz} Hz outside [${lo}, ${hi}]`);
  }
  return formatNumber(hz);
}

export function inputGainCommand(gain: number): string {
  if (!(ALLOWED_GAINS as readonly number[]).includes(gain)) {
    throw new ProtocolError(`input gain ${gain} not in ${ALLOWED_GAINS}`);
  }
  return `g${gain}`;
}

export function timeConstantCommand(seconds: number): string {
  const [lo, hi] = TIME_CONSTANT_RANGE_S;
  if (!(seconds >= lo && seconds <= hi)) {
    throw new ProtocolError(`time constant ${seconds} s outside [${lo}, ${hi}]`);
  }
  return `e${formatNumber(seconds)}`;
}

export function outputGainCommand(value: number): string {
  const [lo, hi] = OUTPUT_GAIN_RANGE;
  if (!(value >= lo && value <= hi)) {
    throw new ProtocolError(`output gain ${value} outside [${lo}, ${hi}]`);
  }
  return `s${formatNumber(value)}`;
}

export function lowestHarmonicCommand(n: number): string {
  if (!Number.isInteger(n) || n < MIN_HARMONIC) {
    throw new ProtocolError(`lowest higher harmonic ${n} below ${MIN_HARMONIC}`);
  }
  return `h${n}`;
}
