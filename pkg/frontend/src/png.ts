/**
 * Self-contained PNG codec for 8-bit grayscale and RGB images.
 *
 * The encoder writes stored (uncompressed) deflate blocks with filter 0 on
 * every scanline, so a given pixel buffer always produces the same bytes —
 * exported masks are comparable as files. The decoder implements the full
 * inflate algorithm (stored, fixed, and dynamic blocks) and scanline
 * filters 0-4, enough to read any PNG the rendering service emits, without
 * relying on a canvas or compression support from the host.
 */

export interface DecodedImage {
  width: number;
  height: number;
  /** 1 (grayscale) or 3 (RGB). */
  channels: number;
  /** Row-major, channel-interleaved 8-bit samples, length w*h*channels. */
  pixels: Uint8Array;
}

export class PngFormatError extends Error {}

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

// ---------------------------------------------------------------------------
// checksums
// ---------------------------------------------------------------------------

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

// ---------------------------------------------------------------------------
// zlib: stored-block compression and full decompression
// ---------------------------------------------------------------------------

/** Wrap raw bytes in a zlib stream of stored deflate blocks (no compression). */
export function zlibStore(raw: Uint8Array): Uint8Array {
  const blocks = Math.max(1, Math.ceil(raw.length / 65535));
  const out = new Uint8Array(2 + blocks * 5 + raw.length + 4);
  let pos = 0;
  out[pos++] = 0x78; // CM=8, CINFO=7
  out[pos++] = 0x01; // no dict, check bits make CMF<<8|FLG divisible by 31
  for (let i = 0; i < blocks; i++) {
    const start = i * 65535;
    const chunk = raw.subarray(start, Math.min(start + 65535, raw.length));
    out[pos++] = i === blocks - 1 ? 1 : 0; // BFINAL, BTYPE=00
    out[pos++] = chunk.length & 0xff;
    out[pos++] = chunk.length >>> 8;
    out[pos++] = ~chunk.length & 0xff;
    out[pos++] = (~chunk.length >>> 8) & 0xff;
    out.set(chunk, pos);
    pos += chunk.length;
  }
  const check = adler32(raw);
  out[pos++] = (check >>> 24) & 0xff;
  out[pos++] = (check >>> 16) & 0xff;
  out[pos++] = (check >>> 8) & 0xff;
  out[pos++] = check & 0xff;
  return out;
}

class BitReader {
  pos = 0;
  private bit = 0;

  constructor(private data: Uint8Array) {}

  readBit(): number {
    if (this.pos >= this.data.length) {
      throw new PngFormatError("deflate stream truncated");
    }
    const value = (this.data[this.pos] >>> this.bit) & 1;
    this.bit++;
    if (this.bit === 8) {
      this.bit = 0;
      this.pos++;
    }
    return value;
  }

  readBits(count: number): number {
    let value = 0;
    for (let i = 0; i < count; i++) {
      value |= this.readBit() << i;
    }
    return value;
  }

  alignToByte(): void {
    if (this.bit !== 0) {
      this.bit = 0;
      this.pos++;
    }
  }
}

interface Huffman {
  counts: Int32Array; // number of codes per bit length, index 0..15
  symbols: Int32Array; // symbols sorted by (length, symbol)
}

function buildHuffman(lengths: ArrayLike<number>): Huffman {
  const counts = new Int32Array(16);
  for (let i = 0; i < lengths.length; i++) {
    counts[lengths[i]]++;
  }
  counts[0] = 0;
  const offsets = new Int32Array(16);
  for (let len = 1; len < 16; len++) {
    offsets[len] = offsets[len - 1] + counts[len - 1];
  }
  const symbols = new Int32Array(offsets[15] + counts[15]);
  for (let symbol = 0; symbol < lengths.length; symbol++) {
    if (lengths[symbol] !== 0) {
      symbols[offsets[lengths[symbol]]++] = symbol;
    }
  }
  return { counts, symbols };
}

function decodeSymbol(reader: BitReader, tree: Huffman): number {
  let code = 0;
  let first = 0;
  let index = 0;
  for (let len = 1; len <= 15; len++) {
    code |= reader.readBit();
    const count = tree.counts[len];
    if (code - count < first) {
      return tree.symbols[index + (code - first)];
    }
    index += count;
    first = (first + count) << 1;
    code <<= 1;
  }
  throw new PngFormatError("invalid huffman code");
}

const LENGTH_BASE = [
  3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67,
  83, 99, 115, 131, 163, 195, 227, 258,
];
const LENGTH_EXTRA = [
  0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5,
  5, 5, 5, 0,
];
const DIST_BASE = [
  1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513,
  769, 1025, 1537, 2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DIST_EXTRA = [
  0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10,
  11, 11, 12, 12, 13, 13,
];

const FIXED_LITLEN = buildHuffman(
  (() => {
    const lengths = new Uint8Array(288);
    lengths.fill(8, 0, 144);
    lengths.fill(9, 144, 256);
    lengths.fill(7, 256, 280);
    lengths.fill(8, 280, 288);
    return lengths;
  })(),
);
const FIXED_DIST = buildHuffman(new Uint8Array(30).fill(5));

class OutputBuffer {
  data = new Uint8Array(1 << 16);
  length = 0;

  private grow(needed: number): void {
    let size = this.data.length;
    while (size < needed) {
      size *= 2;
    }
    const next = new Uint8Array(size);
    next.set(this.data.subarray(0, this.length));
    this.data = next;
  }

  push(byte: number): void {
    if (this.length + 1 > this.data.length) {
      this.grow(this.length + 1);
    }
    this.data[this.length++] = byte;
  }

  append(bytes: Uint8Array): void {
    if (this.length + bytes.length > this.data.length) {
      this.grow(this.length + bytes.length);
    }
    this.data.set(bytes, this.length);
    this.length += bytes.length;
  }

  copyWithin(distance: number, length: number): void {
    if (distance > this.length) {
      throw new PngFormatError("deflate back-reference before stream start");
    }
    if (this.length + length > this.data.length) {
      this.grow(this.length + length);
    }
    // byte-by-byte so overlapping copies repeat recent output, as required
    let from = this.length - distance;
    for (let i = 0; i < length; i++) {
      this.data[this.length++] = this.data[from++];
    }
  }

  view(): Uint8Array {
    return this.data.subarray(0, this.length);
  }
}

const CODE_LENGTH_ORDER = [
  16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15,
];

function readDynamicTrees(reader: BitReader): { litlen: Huffman; dist: Huffman } {
  const hlit = reader.readBits(5) + 257;
  const hdist = reader.readBits(5) + 1;
  const hclen = reader.readBits(4) + 4;
  const clLengths = new Uint8Array(19);
  for (let i = 0; i < hclen; i++) {
    clLengths[CODE_LENGTH_ORDER[i]] = reader.readBits(3);
  }
  const clTree = buildHuffman(clLengths);
  const lengths = new Uint8Array(hlit + hdist);
  let i = 0;
  while (i < lengths.length) {
    const symbol = decodeSymbol(reader, clTree);
    if (symbol < 16) {
      lengths[i++] = symbol;
    } else if (symbol === 16) {
      if (i === 0) {
        throw new PngFormatError("length repeat with no previous length");
      }
      const previous = lengths[i - 1];
      let repeat = 3 + reader.readBits(2);
      while (repeat-- > 0) {
        lengths[i++] = previous;
      }
    } else {
      let repeat =
        symbol === 17 ? 3 + reader.readBits(3) : 11 + reader.readBits(7);
      while (repeat-- > 0) {
        lengths[i++] = 0;
      }
    }
    if (i > lengths.length) {
      throw new PngFormatError("code length repeat overflows table");
    }
  }
  if (lengths[256] === 0) {
    throw new PngFormatError("dynamic block has no end-of-block code");
  }
  return {
    litlen: buildHuffman(lengths.subarray(0, hlit)),
    dist: buildHuffman(lengths.subarray(hlit)),
  };
}

/** Decompress a zlib stream (RFC 1950 wrapper around RFC 1951 deflate). */
export function zlibInflate(data: Uint8Array): Uint8Array {
  if (data.length < 6) {
    throw new PngFormatError("zlib stream too short");
  }
  const cmf = data[0];
  const flg = data[1];
  if ((cmf & 0x0f) !== 8) {
    throw new PngFormatError(`unsupported compression method ${cmf & 0x0f}`);
  }
  if ((cmf * 256 + flg) % 31 !== 0) {
    throw new PngFormatError("corrupt zlib header");
  }
  if (flg & 0x20) {
    throw new PngFormatError("preset dictionaries are not supported");
  }
  const body = data.subarray(2, data.length - 4);
  const reader = new BitReader(body);
  const out = new OutputBuffer();
  for (;;) {
    const final = reader.readBit();
    const type = reader.readBits(2);
    if (type === 0) {
      reader.alignToByte();
      if (reader.pos + 4 > body.length) {
        throw new PngFormatError("stored block header truncated");
      }
      const len = body[reader.pos] | (body[reader.pos + 1] << 8);
      const nlen = body[reader.pos + 2] | (body[reader.pos + 3] << 8);
      if ((len ^ nlen) !== 0xffff) {
        throw new PngFormatError("stored block length check failed");
      }
      if (reader.pos + 4 + len > body.length) {
        throw new PngFormatError("stored block body truncated");
      }
      out.append(body.subarray(reader.pos + 4, reader.pos + 4 + len));
      reader.pos += 4 + len;
    } else if (type === 1 || type === 2) {
      const trees =
        type === 1
          ? { litlen: FIXED_LITLEN, dist: FIXED_DIST }
          : readDynamicTrees(reader);
      for (;;) {
        const symbol = decodeSymbol(reader, trees.litlen);
        if (symbol < 256) {
          out.push(symbol);
        } else if (symbol === 256) {
          break;
        } else {
          const lenIndex = symbol - 257;
          if (lenIndex >= LENGTH_BASE.length) {
            throw new PngFormatError(`invalid length symbol ${symbol}`);
          }
          const length =
            LENGTH_BASE[lenIndex] + reader.readBits(LENGTH_EXTRA[lenIndex]);
          const distSymbol = decodeSymbol(reader, trees.dist);
          if (distSymbol >= DIST_BASE.length) {
            throw new PngFormatError(`invalid distance symbol ${distSymbol}`);
          }
          const distance =
            DIST_BASE[distSymbol] + reader.readBits(DIST_EXTRA[distSymbol]);
          out.copyWithin(distance, length);
        }
      }
    } else {
      throw new PngFormatError("reserved deflate block type");
    }
    if (final) {
      break;
    }
  }
  const result = out.view();
  const tail = data.length - 4;
  const stored =
    ((data[tail] << 24) | (data[tail + 1] << 16) | (data[tail + 2] << 8) |
      data[tail + 3]) >>> 0;
  if (adler32(result) !== stored) {
    throw new PngFormatError("zlib checksum mismatch");
  }
  // detach from the shared growth buffer
  return result.slice();
}

// ---------------------------------------------------------------------------
// PNG container
// ---------------------------------------------------------------------------

function writeChunk(type: string, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + body.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, body.length);
  for (let i = 0; i < 4; i++) {
    out[4 + i] = type.charCodeAt(i);
  }
  out.set(body, 8);
  view.setUint32(8 + body.length, crc32(out.subarray(4, 8 + body.length)));
  return out;
}

/**
 * Encode interleaved 8-bit samples as a PNG. ``channels`` selects grayscale
 * (1) or RGB (3); the byte output is a pure function of the arguments.
 */
export function encodePng(
  width: number,
  height: number,
  channels: 1 | 3,
  pixels: Uint8Array,
): Uint8Array {
  if (width <= 0 || height <= 0) {
    throw new PngFormatError(`invalid dimensions ${width}x${height}`);
  }
  if (pixels.length !== width * height * channels) {
    throw new PngFormatError(
      `pixel buffer holds ${pixels.length} bytes, ` +
        `expected ${width * height * channels}`,
    );
  }
  const header = new Uint8Array(13);
  const view = new DataView(header.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  header[8] = 8; // bit depth
  header[9] = channels === 1 ? 0 : 2; // color type
  // compression, filter, interlace all 0

  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    // filter byte 0 (None), then the scanline verbatim
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }

  const chunks = [
    new Uint8Array(SIGNATURE),
    writeChunk("IHDR", header),
    writeChunk("IDAT", zlibStore(raw)),
    writeChunk("IEND", new Uint8Array(0)),
  ];
  const total = chunks.reduce((sum, c) => sum + c.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const chunk of chunks) {
    out.set(chunk, pos);
    pos += chunk.length;
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) {
    return a;
  }
  return pb <= pc ? b : c;
}

/**
 * Decode an 8-bit grayscale or RGB PNG (non-interlaced, no alpha). Anything
 * else raises PngFormatError — the service never emits other layouts.
 */
export function decodePng(bytes: Uint8Array): DecodedImage {
  if (bytes.length < 8 || SIGNATURE.some((b, i) => bytes[i] !== b)) {
    throw new PngFormatError("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Uint8Array[] = [];
  let pos = 8;
  let sawHeader = false;
  let sawEnd = false;
  while (pos + 12 <= bytes.length && !sawEnd) {
    const view = new DataView(bytes.buffer, bytes.byteOffset + pos);
    const length = view.getUint32(0);
    const type = String.fromCharCode(
      bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7],
    );
    if (pos + 12 + length > bytes.length) {
      throw new PngFormatError(`truncated ${type} chunk`);
    }
    const body = bytes.subarray(pos + 8, pos + 8 + length);
    const check = crc32(bytes.subarray(pos + 4, pos + 8 + length));
    const stored = view.getUint32(8 + length);
    if (check !== stored) {
      throw new PngFormatError(`bad CRC in ${type} chunk`);
    }
    if (type === "IHDR") {
      const h = new DataView(body.buffer, body.byteOffset);
      width = h.getUint32(0);
      height = h.getUint32(4);
      const bitDepth = body[8];
      const colorType = body[9];
      const interlace = body[12];
      if (bitDepth !== 8) {
        throw new PngFormatError(`unsupported bit depth ${bitDepth}`);
      }
      if (colorType !== 0 && colorType !== 2) {
        throw new PngFormatError(`unsupported color type ${colorType}`);
      }
      if (interlace !== 0) {
        throw new PngFormatError("interlaced PNGs are not supported");
      }
      channels = colorType === 0 ? 1 : 3;
      sawHeader = true;
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      sawEnd = true;
    }
    pos += 12 + length;
  }
  if (!sawHeader || !sawEnd || idat.length === 0) {
    throw new PngFormatError("missing critical PNG chunks");
  }

  const compressedLength = idat.reduce((sum, c) => sum + c.length, 0);
  const compressed = new Uint8Array(compressedLength);
  let offset = 0;
  for (const chunk of idat) {
    compressed.set(chunk, offset);
    offset += chunk.length;
  }
  const raw = zlibInflate(compressed);

  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new PngFormatError(
      `decompressed size ${raw.length} does not match ` +
        `${height} scanlines of ${stride + 1} bytes`,
    );
  }
  const pixels = new Uint8Array(stride * height);
  const bpp = channels;
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const outRow = y * stride;
    const prevRow = outRow - stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= bpp ? pixels[outRow + x - bpp] : 0;
      const above = y > 0 ? pixels[prevRow + x] : 0;
      const upperLeft = y > 0 && x >= bpp ? pixels[prevRow + x - bpp] : 0;
      let value = row[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value += left;
          break;
        case 2:
          value += above;
          break;
        case 3:
          value += (left + above) >> 1;
          break;
        case 4:
          value += paeth(left, above, upperLeft);
          break;
        default:
          throw new PngFormatError(`unknown scanline filter ${filter}`);
      }
      pixels[outRow + x] = value & 0xff;
    }
  }
  return { width, height, channels, pixels };
}
