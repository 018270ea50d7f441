/**
 * End-to-end check against the real rendering service: spawns `ampn serve`
 * with a freshly built checkpoint, drives it through the same EditorSession
 * + ApiClient stack the page uses, and verifies the contract the UI relies
 * on — an all-white painted mask returns the input unchanged, and a slider
 * change rides along as `background_level`.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { EditorSession } from "../src/editor.js";
import { decodePng, encodePng } from "../src/png.js";

// both divisible by 32 (pyramid + trunk downsampling), so the service
// processes the image at its native size and the identity check is exact
const WIDTH = 64;
const HEIGHT = 32;

function gradientImage(): Uint8Array {
  const pixels = new Uint8Array(WIDTH * HEIGHT * 3);
  for (let y = 0; y < HEIGHT; y++) {
    for (let x = 0; x < WIDTH; x++) {
      const at = (y * WIDTH + x) * 3;
      pixels[at] = (x * 5) % 256;
      pixels[at + 1] = (y * 7) % 256;
      pixels[at + 2] = ((x + y) * 3) % 256;
    }
  }
  return encodePng(WIDTH, HEIGHT, 3, pixels);
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        probe.close();
        reject(new Error("could not allocate a port"));
        return;
      }
      const { port } = address;
      probe.close(() => resolve(port));
    });
  });
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

let workDir: string;
let server: ChildProcess | null = null;
let serverLog = "";
let serverExited = false;
let baseUrl: string;

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "ampn-ui-test-"));
  const ckpt = join(workDir, "model.ampn");
  execFileSync("python3", ["-c", [
    "from ampn.types import ModelConfig",
    "from ampn.pipeline import build_pipeline",
    "from ampn.container import checkpoint_from_pipeline",
    "p = build_pipeline(ModelConfig.desk_scale(), seed=8)",
    `checkpoint_from_pipeline(p).save(${JSON.stringify(ckpt)})`,
  ].join("\n")], { stdio: ["ignore", "inherit", "inherit"] });

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn("python3", ["-c", [
    "from ampn.cli import main",
    "raise SystemExit(main([",
    `    'serve', '--ckpt', ${JSON.stringify(ckpt)},`,
    `    '--host', '127.0.0.1', '--port', '${port}',`,
    "]))",
  ].join("\n")], { stdio: ["ignore", "pipe", "pipe"] });
  server.stdout!.on("data", (piece: Buffer) => { serverLog += piece; });
  server.stderr!.on("data", (piece: Buffer) => { serverLog += piece; });
  server.on("exit", () => { serverExited = true; });

  const deadline = Date.now() + 90_000;
  for (;;) {
    if (serverExited) {
      throw new Error(`service exited during startup:\n${serverLog}`);
    }
    try {
      const res = await fetch(`${baseUrl}/api/health`);
      if (res.ok && (await res.json()).status === "ok") {
        break;
      }
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service never became healthy:\n${serverLog}`);
    }
    await sleep(300);
  }
});

afterAll(async () => {
  if (server !== null && !serverExited) {
    server.kill("SIGTERM");
    const deadline = Date.now() + 10_000;
    while (!serverExited && Date.now() < deadline) {
      await sleep(100);
    }
    if (!serverExited) {
      server.kill("SIGKILL");
    }
  }
  rmSync(workDir, { recursive: true, force: true });
});

describe("editor against the live service", () => {
  const requestBodies: Uint8Array[] = [];
  const recordingFetch = (async (input: RequestInfo | URL,
                                 init?: RequestInit) => {
    if (init?.body instanceof Uint8Array) {
      requestBodies.push(init.body);
    }
    return fetch(input as Parameters<typeof fetch>[0], init);
  }) as typeof fetch;

  it("returns the input unchanged for an all-white painted mask", async () => {
    const session = new EditorSession(new ApiClient(baseUrl, recordingFetch));
    const input = gradientImage();
    session.loadImage(input);

    // paint the whole canvas white with one oversized stroke
    session.brush = { radius: WIDTH + HEIGHT, value: 1, mode: "paint" };
    session.paint([
      { x: 0, y: 0 },
      { x: WIDTH, y: HEIGHT },
    ]);
    for (const value of session.mask!.values) {
      expect(value).toBe(1);
    }

    expect(await session.submit()).toBe(true);
    expect(session.error).toBeNull();
    expect(session.result!.maskSource).toBe("external");

    const rendered = decodePng(session.result!.imagePng);
    const original = decodePng(input);
    expect(rendered.width).toBe(WIDTH);
    expect(rendered.height).toBe(HEIGHT);
    expect(rendered.channels).toBe(3);
    let worst = 0;
    for (let i = 0; i < original.pixels.length; i++) {
      worst = Math.max(worst, Math.abs(rendered.pixels[i] - original.pixels[i]));
    }
    expect(worst).toBeLessThanOrEqual(1); // within 1/255 per channel

    // moving the slider and resubmitting carries the new level
    requestBodies.length = 0;
    session.setBackgroundLevel(0.3);
    expect(await session.submit()).toBe(true);
    expect(requestBodies).toHaveLength(1);
    const text = new TextDecoder("latin1").decode(requestBodies[0]);
    expect(text).toContain('name="background_level"');
    expect(text).toMatch(/name="background_level"\r\n\r\n0\.3\r\n/);
  });

  it("predicts a mask when none is painted", async () => {
    const session = new EditorSession(new ApiClient(baseUrl));
    session.loadImage(gradientImage());
    expect(await session.submit()).toBe(true);
    expect(session.result!.maskSource).toBe("g1");
    expect(session.mask!.width).toBe(WIDTH);
    expect(session.mask!.height).toBe(HEIGHT);
    // the predicted layer is a real grayscale map, ready for editing
    expect(session.mask!.values.some((v) => v > 0)).toBe(true);
  });
});
