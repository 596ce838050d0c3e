import { describe, expect, it } from "vitest";

import { CloudView, rotatePoint } from "../src/cloud_view";
import { ApiClient } from "../src/api";
import { LinkState } from "../src/state";

describe("cloud rotation", () => {
  it("a full turn in yaw and pitch is the identity", () => {
    const p = { x: 0.3, y: -1.2, z: 2.1 };
    const before = rotatePoint(p, { yaw: 0.7, pitch: -0.4 });
    const after = rotatePoint(p, {
      yaw: 0.7 + 2 * Math.PI,
      pitch: -0.4 + 2 * Math.PI,
    });
    expect(after.sx).toBeCloseTo(before.sx, 9);
    expect(after.sy).toBeCloseTo(before.sy, 9);
    expect(after.depth).toBeCloseTo(before.depth, 9);
  });

  it("36 drag steps of 10 degrees return the view to its start pose", () => {
    const view = new CloudView(
      document.createElement("div"),
      new ApiClient("http://127.0.0.1:1/"),
      new LinkState(),
    );
    const start = { ...view.pose };
    const p = { x: 1.0, y: 0.5, z: -0.25 };
    const before = rotatePoint(p, start);
    for (let i = 0; i < 36; i++) view.rotateBy((2 * Math.PI) / 36, 0);
    expect(view.pose.yaw).toBeCloseTo(start.yaw + 2 * Math.PI, 9);
    const after = rotatePoint(p, view.pose);
    expect(after.sx).toBeCloseTo(before.sx, 9);
    expect(after.sy).toBeCloseTo(before.sy, 9);
    expect(after.depth).toBeCloseTo(before.depth, 9);
  });
});
