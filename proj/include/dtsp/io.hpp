#pragma once

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "dtsp/error.hpp"

namespace dtsp::io {

inline bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

/// Shortest form that still carries 17 significant digits.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Line reader over plain or gzip files (zlib reads both transparently).
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path) {
    file_ = gzopen(path.string().c_str(), "rb");
    if (file_ == nullptr) fail(ErrorCode::IoError, "cannot open " + path.string());
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;
  ~LineReader() {
    if (file_ != nullptr) gzclose(file_);
  }

  /// Reads the next line without its terminator. `complete` is false when the
  /// line ran into end-of-file without a newline.
  bool next(std::string& line, bool& complete) {
    line.clear();
    complete = false;
    char buf[8192];
    while (gzgets(file_, buf, sizeof buf) != nullptr) {
      line.append(buf);
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        if (!line.empty() && line.back() == '\r') line.pop_back();
        complete = true;
        ++line_no_;
        return true;
      }
    }
    int err = Z_OK;
    gzerror(file_, &err);
    if (err != Z_OK && err != Z_BUF_ERROR) fail(ErrorCode::IoError, "read failure in " + path_.string());
    if (line.empty()) return false;
    ++line_no_;
    return true;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::filesystem::path path_;
  gzFile file_ = nullptr;
  std::size_t line_no_ = 0;
};

/// Writes to "<path>.tmp" and renames into place on commit(), so readers
/// never observe a partial file. Gzip-compresses when the path ends in .gz.
class AtomicWriter {
 public:
  explicit AtomicWriter(std::filesystem::path path) : path_(std::move(path)), tmp_(path_.string() + ".tmp") {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (is_gzip_path(path_)) {
      gz_ = gzopen(tmp_.string().c_str(), "wb6");
      if (gz_ == nullptr) fail(ErrorCode::IoError, "cannot create " + tmp_.string());
    } else {
      out_.open(tmp_, std::ios::binary | std::ios::trunc);
      if (!out_) fail(ErrorCode::IoError, "cannot create " + tmp_.string());
    }
  }
  AtomicWriter(const AtomicWriter&) = delete;
  AtomicWriter& operator=(const AtomicWriter&) = delete;
  ~AtomicWriter() {
    if (committed_) return;
    if (gz_ != nullptr) gzclose(gz_);
    out_.close();
    std::error_code ec;
    std::filesystem::remove(tmp_, ec);
  }

  void write(std::string_view data) {
    if (gz_ != nullptr) {
      if (!data.empty() && gzwrite(gz_, data.data(), static_cast<unsigned>(data.size())) == 0) {
        fail(ErrorCode::IoError, "write failure in " + tmp_.string());
      }
    } else {
      out_.write(data.data(), static_cast<std::streamsize>(data.size()));
      if (!out_) fail(ErrorCode::IoError, "write failure in " + tmp_.string());
    }
  }

  void write_line(std::string_view line) {
    write(line);
    write("\n");
  }

  void commit() {
    if (gz_ != nullptr) {
      if (gzclose(gz_) != Z_OK) fail(ErrorCode::IoError, "close failure in " + tmp_.string());
      gz_ = nullptr;
    } else {
      out_.close();
      if (!out_) fail(ErrorCode::IoError, "close failure in " + tmp_.string());
    }
    std::filesystem::rename(tmp_, path_);
    committed_ = true;
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  gzFile gz_ = nullptr;
  bool committed_ = false;
};

inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  AtomicWriter w(path);
  w.write(content);
  w.commit();
}

}  // namespace dtsp::io
