import { describe, expect, it } from "vitest";

import {
  formatFrame,
  frequencyCommand,
  inputGainCommand,
  lowestHarmonicCommand,
  outputGainCommand,
  parseFrame,
  ProtocolError,
  queryFrequencyCommand,
  timeConstantCommand,
  toggleReferenceCommand,
  toggleSyncCommand,
} from "../src/protocol.js";

const GOLDEN =
  "0 10.00 1 0 0 200 200000.00 1000.00 0.60 0 416.40687 -0.03235 0.01083 " +
  "416.18902 -13.46777 -0.33040 138.06182 -0.60012 -4.63077 -13.43283 " +
  "-4.57161 2\r\n";

const DEFAULT_ZERO =
  "0 10.00 1 0 0 0 0.00 0.00 0.00 0 0.00000 0.00000 0.00000 0.00000 " +
  "0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 2\r\n";

describe("frame grammar", () => {
  it("round-trips the golden line byte for byte", () => {
    const frame = parseFrame(GOLDEN);
    expect(frame.error).toBe(0);
    expect(frame.outputGain).toBe(10.0);
    expect(frame.inputGain).toBe(1);
    expect(frame.samplesPerPeriod).toBe(200);
    expect(frame.sampleRateHz).toBe(200000.0);
    expect(frame.referenceHz).toBe(1000.0);
    expect(frame.timeConstantS).toBe(0.6);
    expect(frame.undersampling).toBe(0);
    expect(frame.r1).toBeCloseTo(416.40687, 10);
    expect(frame.phi1).toBeCloseTo(-0.03235, 10);
    expect(frame.lowestHarmonic).toBe(2);
    expect(formatFrame(frame)).toBe(GOLDEN);
  });

  it("round-trips the all-zero default line", () => {
    expect(formatFrame(parseFrame(DEFAULT_ZERO))).toBe(DEFAULT_ZERO);
  });

  it("rejects malformed lines distinctly", () => {
    expect(() => parseFrame("1 2 3")).toThrow(/expected 22 fields/);
    expect(() => parseFrame(GOLDEN.replace("0 10.00", "0.5 10.00"))).toThrow(
      /not an integer/,
    );
    expect(() => parseFrame(GOLDEN.replace("416.40687", "abc"))).toThrow(
      /not a number/,
    );
    expect(() => parseFrame(GOLDEN.replace(" 0.60 0 ", " 0.60 3 "))).toThrow(
      /undersampling/,
    );
    // undersampling 0 is exclusive to internal mode
    const externalBroken = GOLDEN.replace("1 0 0 200", "1 0 1 200");
    expect(() => parseFrame(externalBroken)).toThrow(/internal reference/);
  });

  it("keeps error indicator bits 0..3", () => {
    const frame = parseFrame(GOLDEN);
    frame.error = 3;
    expect(formatFrame(frame).split(" ")[0]).toBe("3");
    frame.error = 4;
    expect(() => formatFrame(frame)).toThrow(ProtocolError);
  });
});

describe("command builders", () => {
  it("emit the documented command forms", () => {
    expect(toggleSyncCommand()).toBe("t");
    expect(toggleReferenceCommand()).toBe("r");
    expect(queryFrequencyCommand()).toBe("c");
    expect(frequencyCommand(200)).toBe("200");
    expect(inputGainCommand(2)).toBe("g2");
    expect(timeConstantCommand(6)).toBe("e6");
    expect(outputGainCommand(10)).toBe("s10");
    expect(lowestHarmonicCommand(2)).toBe("h2");
    expect(lowestHarmonicCommand(3)).toBe("h3");
  });

  it("rejects out-of-range settings locally", () => {
    expect(() => frequencyCommand(0.5)).toThrow(ProtocolError);
    expect(() => frequencyCommand(60000)).toThrow(ProtocolError);
    expect(() => inputGainCommand(3)).toThrow(ProtocolError);
    expect(() => timeConstantCommand(0.001)).toThrow(ProtocolError);
    expect(() => timeConstantCommand(11)).toThrow(ProtocolError);
    expect(() => outputGainCommand(-1)).toThrow(ProtocolError);
    expect(() => lowestHarmonicCommand(1)).toThrow(ProtocolError);
    expect(() => lowestHarmonicCommand(2.5)).toThrow(ProtocolError);
  });
});
