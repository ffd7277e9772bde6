#include "inkwell/codec.hpp"

#include <cmath>

namespace inkwell {

DotCodeLayout DotCodeLayout::make(std::size_t n_bits, std::size_t height, std::size_t width) {
  if (n_bits == 0) throw CodecError("dot code needs at least one bit");
  DotCodeLayout l;
  l.n_bits = n_bits;
  l.height = height;
  l.width = width;
  l.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_bits))));
  while (l.cols * l.cols < n_bits) ++l.cols;
  while (l.cols > 1 && (l.cols - 1) * (l.cols - 1) >= n_bits) --l.cols;
  l.rows = (n_bits + l.cols - 1) / l.cols;
  l.patch_px = std::min(width / l.cols, height / l.rows);
  if (l.patch_px == 0)
    throw CodecError(std::to_string(n_bits) + " bits do not fit a " + std::to_string(height) + "x" +
                     std::to_string(width) + " image");
  return l;
}

Tensor dotcode_encode(const Bits& bits, std::size_t channels, std::size_t height, std::size_t width) {
  const DotCodeLayout l = DotCodeLayout::make(bits.size(), height, width);
  Tensor img({channels, height, width}, 0.0f);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!bits[i]) continue;
    const std::size_t r = i / l.cols, c = i % l.cols;
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < l.patch_px; ++y)
        for (std::size_t x = 0; x < l.patch_px; ++x)
          img[(ch * height + r * l.patch_px + y) * width + c * l.patch_px + x] = 1.0f;
  }
  return img;
}

Bits dotcode_decode(const Tensor& image, std::size_t n_bits, float threshold) {
  if (image.rank() != 3) throw CodecError("dotcode_decode expects a (C, H, W) image");
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  const DotCodeLayout l = DotCodeLayout::make(n_bits, height, width);
  Bits bits(n_bits);
  for (std::size_t i = 0; i < n_bits; ++i) {
    const std::size_t r = i / l.cols, c = i % l.cols;
    std::size_t white = 0, total = 0;
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < l.patch_px; ++y)
        for (std::size_t x = 0; x < l.patch_px; ++x, ++total)
          white += image[(ch * height + r * l.patch_px + y) * width + c * l.patch_px + x] >= threshold;
    bits[i] = 2 * white >= total ? 1 : 0;
  }
  return bits;
}

Bits hamming74_encode(const Bits& data, std::size_t* padding) {
  Bits d = data;
  const std::size_t pad = (4 - d.size() % 4) % 4;
  d.resize(d.size() + pad, 0);
  if (padding) *padding = pad;
  Bits out;
  out.reserve(d.size() / 4 * 7);
  for (std::size_t i = 0; i < d.size(); i += 4) {
    const std::uint8_t d1 = d[i] & 1, d2 = d[i + 1] & 1, d3 = d[i + 2] & 1, d4 = d[i + 3] & 1;
    const std::uint8_t p1 = d1 ^ d2 ^ d4, p2 = d1 ^ d3 ^ d4, p3 = d2 ^ d3 ^ d4;
    out.insert(out.end(), {p1, p2, d1, p3, d2, d3, d4});
  }
  return out;
}

HammingDecoded hamming74_decode(const Bits& code) {
  if (code.size() % 7 != 0) throw CodecError("Hamming(7,4) code length " + std::to_string(code.size()) + " is not a multiple of 7");
  HammingDecoded r;
  r.data.reserve(code.size() / 7 * 4);
  for (std::size_t i = 0; i < code.size(); i += 7) {
    std::uint8_t b[7];
    for (std::size_t k = 0; k < 7; ++k) b[k] = code[i + k] & 1;
    const unsigned s1 = b[0] ^ b[2] ^ b[4] ^ b[6];
    const unsigned s2 = b[1] ^ b[2] ^ b[5] ^ b[6];
    const unsigned s3 = b[3] ^ b[4] ^ b[5] ^ b[6];
    const unsigned pos = s1 | (s2 << 1) | (s3 << 2);
    if (pos) {
      b[pos - 1] ^= 1;
      ++r.corrections;
    }
    r.data.insert(r.data.end(), {b[2], b[4], b[5], b[6]});
  }
  return r;
}

Bits bytes_to_bits(const std::string& bytes) {
  Bits bits;
  bits.reserve(bytes.size() * 8);
  for (unsigned char c : bytes)
    for (int k = 7; k >= 0; --k) bits.push_back((c >> k) & 1);
  return bits;
}

std::string bits_to_bytes(const Bits& bits) {
  if (bits.size() % 8 != 0) throw CodecError("bit length is not a multiple of 8");
  std::string out(bits.size() / 8, '\0');
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] = static_cast<char>(static_cast<unsigned char>(out[i / 8]) | (0x80u >> (i % 8)));
  return out;
}

std::vector<Bits> chunk_bits(const Bits& bits, std::size_t chunk) {
  if (chunk == 0) throw CodecError("chunk size must be positive");
  std::vector<Bits> out;
  for (std::size_t i = 0; i < bits.size(); i += chunk) {
    Bits c(bits.begin() + static_cast<std::ptrdiff_t>(i),
           bits.begin() + static_cast<std::ptrdiff_t>(std::min(bits.size(), i + chunk)));
    c.resize(chunk, 0);
    out.push_back(std::move(c));
  }
  return out;
}

Bits join_chunks(const std::vector<Bits>& chunks, std::size_t bit_length) {
  Bits out;
  for (const auto& c : chunks) out.insert(out.end(), c.begin(), c.end());
  if (out.size() < bit_length) throw CodecError("chunks hold fewer bits than the recorded length");
  out.resize(bit_length);
  return out;
}

std::string to_string(Ecc e) { return e == Ecc::None ? "none" : "hamming74"; }

Ecc parse_ecc(const std::string& s) {
  if (s == "none") return Ecc::None;
  if (s == "hamming74") return Ecc::Hamming74;
  throw CodecError("unknown ecc mode '" + s + "' (expected none or hamming74)");
}

EncodedPayload encode_payload(const Bits& payload, Ecc ecc, std::size_t chunk) {
  if (payload.empty()) throw CodecError("payload is empty");
  EncodedPayload e;
  e.manifest.bit_length = payload.size();
  e.manifest.ecc = ecc;
  e.manifest.chunk_bits = chunk;
  const Bits coded = ecc == Ecc::Hamming74 ? hamming74_encode(payload, &e.manifest.ecc_padding) : payload;
  e.manifest.encoded_length = coded.size();
  e.chunks = chunk_bits(coded, chunk);
  e.manifest.chunks = e.chunks.size();
  return e;
}

Bits decode_payload(const std::vector<Bits>& chunks, const PayloadManifest& m, std::size_t* corrections) {
  if (chunks.size() != m.chunks) throw CodecError("expected " + std::to_string(m.chunks) + " chunks");
  Bits coded = join_chunks(chunks, m.encoded_length);
  if (m.ecc == Ecc::Hamming74) {
    HammingDecoded d = hamming74_decode(coded);
    if (corrections) *corrections = d.corrections;
    d.data.resize(m.bit_length);
    return d.data;
  }
  if (corrections) *corrections = 0;
  coded.resize(m.bit_length);
  return coded;
}

}  // namespace inkwell
