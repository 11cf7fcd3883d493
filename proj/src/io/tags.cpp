#include "qlink/io/tags.hpp"

#include <charconv>
#include <cstring>

namespace qlink::io {

namespace {

constexpr std::size_t kReadBufferBytes = 1 << 16;

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}

}  // namespace

TagFormatError::TagFormatError(const std::string& what, std::uint64_t offset)
    : IoError(what + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}

TagOrderError::TagOrderError(const std::string& what, std::uint64_t index)
    : IoError(what + " (record " + std::to_string(index) + ")"), record_index(index) {}

CsvParseError::CsvParseError(const std::string& what, std::uint64_t line)
    : IoError(what + " (line " + std::to_string(line) + ")"), line_number(line) {}

bool TagStream::is_sorted() const {
  for (std::size_t i = 1; i < t_ps.size(); ++i)
    if (t_ps[i] < t_ps[i - 1]) return false;
  return true;
}

double TagStream::duration_s() const {
  if (t_ps.size() < 2) return 0.0;
  return static_cast<double>(t_ps.back() - t_ps.front()) * 1e-12;
}

std::uint64_t write_tags(const TagStream& stream, const std::filesystem::path& destination) {
  if (!stream.is_sorted()) throw TagOrderError("refusing to write unsorted stream", 0);
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + destination.string());

  std::string buf;
  buf.reserve(kReadBufferBytes);
  buf.append(reinterpret_cast<const char*>(kTagMagic.data()), kTagMagic.size());
  put_u64_le(buf, stream.resolution_ps);
  buf.push_back(static_cast<char>(stream.channel_count));
  const std::uint16_t label_len = static_cast<std::uint16_t>(stream.station_label.size());
  buf.push_back(static_cast<char>(label_len & 0xff));
  buf.push_back(static_cast<char>(label_len >> 8));
  buf.append(stream.station_label);
  buf.append(reinterpret_cast<const char*>(stream.config_digest.data()), 32);

  std::uint64_t written = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    buf.push_back(static_cast<char>(stream.channel[i]));
    put_u64_le(buf, stream.t_ps[i]);
    if (buf.size() >= kReadBufferBytes) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      written += buf.size();
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  written += buf.size();
  out.flush();
  if (!out) throw IoError("write failed: " + destination.string());
  return written;
}

TagReader::TagReader(const std::filesystem::path& source)
    : in_(source, std::ios::binary), path_(source), buffer_(kReadBufferBytes) {
  if (!in_) throw IoError("cannot open: " + source.string());

  std::array<char, 19> fixed{};
  in_.read(fixed.data(), fixed.size());
  if (in_.gcount() != static_cast<std::streamsize>(fixed.size()))
    throw TagFormatError("truncated header", static_cast<std::uint64_t>(in_.gcount()));
  if (std::memcmp(fixed.data(), kTagMagic.data(), kTagMagic.size()) != 0)
    throw TagFormatError("bad magic number", 0);
  header_.resolution_ps = get_u64_le(fixed.data() + 8);
  if (header_.resolution_ps < 1) throw TagFormatError("resolution_ps must be >= 1", 8);
  header_.channel_count = static_cast<std::uint8_t>(fixed[16]);
  const std::uint16_t label_len = static_cast<std::uint8_t>(fixed[17]) |
                                  (static_cast<std::uint16_t>(static_cast<std::uint8_t>(fixed[18])) << 8);
  std::string label(label_len, '\0');
  in_.read(label.data(), label_len);
  if (in_.gcount() != label_len) throw TagFormatError("truncated station label", 19);
  header_.station_label = std::move(label);
  in_.read(reinterpret_cast<char*>(header_.config_digest.data()), 32);
  if (in_.gcount() != 32) throw TagFormatError("truncated config digest", 19 + label_len);
  byte_offset_ = 19 + label_len + 32;
}

void TagReader::fill() {
  // Keep any partial record at the head of the buffer.
  const std::size_t tail = buf_len_ - buf_pos_;
  if (tail > 0) std::memmove(buffer_.data(), buffer_.data() + buf_pos_, tail);
  buf_pos_ = 0;
  buf_len_ = tail;
  in_.read(buffer_.data() + buf_len_, static_cast<std::streamsize>(buffer_.size() - buf_len_));
  buf_len_ += static_cast<std::size_t>(in_.gcount());
}

bool TagReader::next(TimeTag& out) {
  if (buf_len_ - buf_pos_ < kTagRecordBytes) {
    fill();
    if (buf_len_ == 0) return false;  // clean EOF
    if (buf_len_ < kTagRecordBytes)
      throw TagFormatError("truncated record", byte_offset_ + buf_len_);
  }
  const char* p = buffer_.data() + buf_pos_;
  out.channel = static_cast<std::uint8_t>(p[0]);
  out.t_ps = get_u64_le(p + 1);
  if (have_last_ && out.t_ps < last_t_)
    throw TagOrderError("timestamps not monotonically non-decreasing", record_index_);
  last_t_ = out.t_ps;
  have_last_ = true;
  buf_pos_ += kTagRecordBytes;
  byte_offset_ += kTagRecordBytes;
  ++record_index_;
  return true;
}

TagStream read_tags(const std::filesystem::path& source) {
  TagReader reader(source);
  TagStream stream;
  stream.resolution_ps = reader.header().resolution_ps;
  stream.channel_count = reader.header().channel_count;
  stream.station_label = reader.header().station_label;
  stream.config_digest = reader.header().config_digest;
  TimeTag tag;
  while (reader.next(tag)) stream.push_back(tag.channel, tag.t_ps);
  return stream;
}

TagStream read_tags_csv(const std::filesystem::path& source, CsvColumns columns) {
  std::ifstream in(source);
  if (!in) throw IoError("cannot open: " + source.string());
  const int max_col = std::max(columns.channel_col, columns.time_col);

  TagStream stream;
  std::string line;
  std::uint64_t line_no = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv(line);
    if (sv.find_first_not_of(" \t") == std::string_view::npos) continue;

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = sv.find(',', start);
      fields.push_back(sv.substr(start, comma == std::string_view::npos ? sv.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (static_cast<int>(fields.size()) <= max_col)
      throw CsvParseError("too few columns", line_no);

    auto parse_u64 = [&](std::string_view f, std::uint64_t& v) {
      while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
      while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      return ec == std::errc{} && ptr == f.data() + f.size();
    };
    std::uint64_t ch = 0, t = 0;
    if (!parse_u64(fields[columns.channel_col], ch) || !parse_u64(fields[columns.time_col], t)) {
      if (!seen_data) continue;  // optional header row
      throw CsvParseError("unparsable row", line_no);
    }
    if (ch > 255) throw CsvParseError("channel out of range", line_no);
    if (!stream.empty() && t < stream.t_ps.back())
      throw CsvParseError("timestamps not monotonically non-decreasing", line_no);
    stream.push_back(static_cast<std::uint8_t>(ch), t);
    seen_data = true;
  }
  return stream;
}

std::uint64_t write_tags_csv(const TagStream& stream, const std::filesystem::path& destination) {
  if (!stream.is_sorted()) throw TagOrderError("refusing to write unsorted stream", 0);
  std::ofstream out(destination, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + destination.string());
  std::string buf = "channel,t_ps\n";
  for (std::size_t i = 0; i < stream.size(); ++i) {
    buf += std::to_string(stream.channel[i]);
    buf.push_back(',');
    buf += std::to_string(stream.t_ps[i]);
    buf.push_back('\n');
    if (buf.size() >= kReadBufferBytes) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + destination.string());
  return 0;
}

std::string digest_hex(const std::array<std::uint8_t, 32>& digest) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (std::uint8_t b : digest) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xf]);
  }
  return out;
}

}  // namespace qlink::io
