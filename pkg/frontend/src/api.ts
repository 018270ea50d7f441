/**
 * Typed client for the rendering service.
 *
 * POST /api/render takes multipart form data: `image` (PNG file), optional
 * `mask` (grayscale PNG file), optional `background_level` (decimal string
 * in [0, 0.8)), and `return_mask` ("0" | "1"). The body is assembled by
 * hand so the client behaves identically under browser fetch and the test
 * runtime, and so tests can inspect the exact bytes sent.
 */

export interface RenderOptions {
  /** Grayscale PNG bytes; omitted → the service predicts the mask itself. */
  maskPng?: Uint8Array;
  /** Background intensity for the f-stop control. */
  backgroundLevel?: number;
  /** Ask for the used mask alongside the image (base64 JSON response). */
  returnMask?: boolean;
}

export interface RenderResult {
  imagePng: Uint8Array;
  /** Present when returnMask was requested. */
  maskPng: Uint8Array | null;
  /** "g1" for a predicted mask, "external" for a supplied one. */
  maskSource: string;
}

export interface HealthReport {
  status: string;
  model: string;
}

/** A structured error response ({"error": code, "detail": message}). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

interface Part {
  name: string;
  value: string | Uint8Array;
  filename?: string;
  contentType?: string;
}

const encoder = new TextEncoder();

function buildMultipart(parts: Part[], boundary: string): Uint8Array {
  const segments: Uint8Array[] = [];
  for (const part of parts) {
    let head = `--${boundary}\r\nContent-Disposition: form-data; name="${part.name}"`;
    if (part.filename !== undefined) {
      head += `; filename="${part.filename}"`;
    }
    head += "\r\n";
    if (part.contentType !== undefined) {
      head += `Content-Type: ${part.contentType}\r\n`;
    }
    head += "\r\n";
    segments.push(encoder.encode(head));
    segments.push(
      typeof part.value === "string" ? encoder.encode(part.value) : part.value,
    );
    segments.push(encoder.encode("\r\n"));
  }
  segments.push(encoder.encode(`--${boundary}--\r\n`));
  const body = new Uint8Array(segments.reduce((sum, s) => sum + s.length, 0));
  let pos = 0;
  for (const segment of segments) {
    body.set(segment, pos);
    pos += segment.length;
  }
  return body;
}

function decodeBase64(text: string): Uint8Array {
  const binary = atob(text);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  return bytes;
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) {
    return;
  }
  let code = `http_${response.status}`;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: string; detail?: string };
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body; keep the HTTP-level description
  }
  throw new ApiError(response.status, code, detail);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
    private readonly boundary: string =
      `----ampn-${Math.random().toString(36).slice(2)}`,
  ) {}

  async health(): Promise<HealthReport> {
    const response = await this.fetchFn(`${this.baseUrl}/api/health`);
    await raiseForStatus(response);
    return (await response.json()) as HealthReport;
  }

  async render(
    imagePng: Uint8Array,
    options: RenderOptions = {},
  ): Promise<RenderResult> {
    const parts: Part[] = [
      {
        name: "image",
        value: imagePng,
        filename: "image.png",
        contentType: "image/png",
      },
    ];
    if (options.maskPng !== undefined) {
      parts.push({
        name: "mask",
        value: options.maskPng,
        filename: "mask.png",
        contentType: "image/png",
      });
    }
    if (options.backgroundLevel !== undefined) {
      parts.push({
        name: "background_level",
        value: options.backgroundLevel.toString(),
      });
    }
    if (options.returnMask) {
      parts.push({ name: "return_mask", value: "1" });
    }
    const response = await this.fetchFn(`${this.baseUrl}/api/render`, {
      method: "POST",
      headers: {
        "Content-Type": `multipart/form-data; boundary=${this.boundary}`,
      },
      body: buildMultipart(parts, this.boundary) as unknown as BodyInit,
    });
    await raiseForStatus(response);

    if (options.returnMask) {
      const body = (await response.json()) as {
        image: string;
        mask: string;
        mask_source: string;
      };
      return {
        imagePng: decodeBase64(body.image),
        maskPng: decodeBase64(body.mask),
        maskSource: body.mask_source,
      };
    }
    const payload = new Uint8Array(await response.arrayBuffer());
    return {
      imagePng: payload,
      maskPng: null,
      maskSource: response.headers.get("X-AMPN-Mask-Source") ?? "unknown",
    };
  }
}
