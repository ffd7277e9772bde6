#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inkwell/tensor.hpp"

namespace inkwell {

using Bits = std::vector<std::uint8_t>;

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// cols = ceil(sqrt(n)), rows = ceil(n / cols), square patches of
// min(floor(width / cols), floor(height / rows)) pixels, filled row-major from
// the top-left corner. Pixels outside the used cells stay black.
struct DotCodeLayout {
  std::size_t n_bits = 0, rows = 0, cols = 0, patch_px = 0, height = 0, width = 0;

  static DotCodeLayout make(std::size_t n_bits, std::size_t height, std::size_t width);
};

inline constexpr float kDotThreshold = 0.53f;

// Black (0) patch for a zero bit, white (1) for a one bit. Returns (C, H, W).
Tensor dotcode_encode(const Bits& bits, std::size_t channels, std::size_t height, std::size_t width);
// Pixels below `threshold` count as black; each patch takes the majority over
// its pixels and channels, ties decode to 1.
Bits dotcode_decode(const Tensor& image, std::size_t n_bits, float threshold = kDotThreshold);

// (7,4) Hamming code, codeword order p1 p2 d1 p3 d2 d3 d4. Data is zero-padded
// to a multiple of 4; `padding` receives the number of added bits.
Bits hamming74_encode(const Bits& data, std::size_t* padding = nullptr);
struct HammingDecoded {
  Bits data;
  std::size_t corrections = 0;
};
// Corrects up to one flipped bit per block. Length must be a multiple of 7.
HammingDecoded hamming74_decode(const Bits& code);

// Bytes to bits, most significant bit first, and back (length multiple of 8).
Bits bytes_to_bits(const std::string& bytes);
std::string bits_to_bytes(const Bits& bits);

// Splits into chunks of `chunk` bits, zero-padding the last one.
std::vector<Bits> chunk_bits(const Bits& bits, std::size_t chunk);
Bits join_chunks(const std::vector<Bits>& chunks, std::size_t bit_length);

enum class Ecc { None, Hamming74 };
std::string to_string(Ecc e);
Ecc parse_ecc(const std::string& s);

struct PayloadManifest {
  std::size_t bit_length = 0;     // payload bits before ECC
  std::size_t encoded_length = 0; // bits after ECC, before chunk padding
  std::size_t ecc_padding = 0;
  std::size_t chunk_bits = 0;
  std::size_t chunks = 0;
  Ecc ecc = Ecc::None;
};

struct EncodedPayload {
  PayloadManifest manifest;
  std::vector<Bits> chunks;
};

EncodedPayload encode_payload(const Bits& payload, Ecc ecc, std::size_t chunk);
// Joins the chunks, undoes the ECC and truncates to the payload length.
Bits decode_payload(const std::vector<Bits>& chunks, const PayloadManifest& m, std::size_t* corrections = nullptr);

}  // namespace inkwell
