#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlink::io {

struct TimeTag {
  std::uint8_t channel = 0;
  std::uint64_t t_ps = 0;
};

// Sorted time-tag stream, stored column-wise; timestamps are unsigned
// picoseconds from an arbitrary per-stream epoch.
struct TagStream {
  std::vector<std::uint64_t> t_ps;
  std::vector<std::uint8_t> channel;

  std::uint64_t resolution_ps = 1;
  std::uint8_t channel_count = 2;
  std::string station_label;
  std::array<std::uint8_t, 32> config_digest{};  // zeros for external data

  std::size_t size() const { return t_ps.size(); }
  bool empty() const { return t_ps.empty(); }
  void push_back(std::uint8_t ch, std::uint64_t t) {
    channel.push_back(ch);
    t_ps.push_back(t);
  }
  TimeTag at(std::size_t i) const { return {channel[i], t_ps[i]}; }
  bool is_sorted() const;
  double duration_s() const;  // last - first, 0 if fewer than 2 tags
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural problems: bad magic, truncated header or record. Carries the
// byte offset of the failure.
class TagFormatError : public IoError {
 public:
  TagFormatError(const std::string& what, std::uint64_t byte_offset);
  std::uint64_t byte_offset;
};

// Non-monotonic timestamps. Carries the offending record index.
class TagOrderError : public IoError {
 public:
  TagOrderError(const std::string& what, std::uint64_t record_index);
  std::uint64_t record_index;
};

class CsvParseError : public IoError {
 public:
  CsvParseError(const std::string& what, std::uint64_t line_number);
  std::uint64_t line_number;
};

inline constexpr std::array<std::uint8_t, 8> kTagMagic = {'Q', 'T', 'A', 'G', 'S', 0, 0, 1};
inline constexpr std::size_t kTagRecordBytes = 9;  // 1-byte channel + 8-byte LE timestamp

struct TagFileHeader {
  std::uint64_t resolution_ps = 1;
  std::uint8_t channel_count = 2;
  std::string station_label;
  std::array<std::uint8_t, 32> config_digest{};

  std::size_t encoded_size() const { return 8 + 8 + 1 + 2 + station_label.size() + 32; }
};

// Writes header plus fixed 9-byte little-endian records; returns the byte
// count written. Throws TagOrderError if the stream is unsorted.
std::uint64_t write_tags(const TagStream& stream, const std::filesystem::path& destination);

// Streaming reader with constant memory use independent of file size.
class TagReader {
 public:
  explicit TagReader(const std::filesystem::path& source);
  const TagFileHeader& header() const { return header_; }
  // Yields the next tag; false at a clean end of file. Throws on a bad
  // magic number, truncated record, or timestamp going backwards.
  bool next(TimeTag& out);

 private:
  void fill();

  std::ifstream in_;
  std::filesystem::path path_;
  TagFileHeader header_;
  std::vector<char> buffer_;
  std::size_t buf_pos_ = 0, buf_len_ = 0;
  std::uint64_t byte_offset_ = 0;   // of buffer_[buf_pos_] within the file
  std::uint64_t record_index_ = 0;
  std::uint64_t last_t_ = 0;
  bool have_last_ = false;
};

TagStream read_tags(const std::filesystem::path& source);

struct CsvColumns {
  int channel_col = 0;
  int time_col = 1;
};

// Parses "channel,t_ps" text with an optional header row; same ordering
// validation as the binary reader.
TagStream read_tags_csv(const std::filesystem::path& source, CsvColumns columns = {});
std::uint64_t write_tags_csv(const TagStream& stream, const std::filesystem::path& destination);

std::string digest_hex(const std::array<std::uint8_t, 32>& digest);

}  // namespace qlink::io
