#pragma once

// HTTP service backing the browser annotation tool.
//
//   GET  /api/images               [{"id", "has_scribble"}, ...] sorted by id
//   GET  /api/images/<id>          original image bytes
//   GET  /api/scribbles/<id>       ternary PNG as stored; 404 when absent
//   PUT  /api/scribbles/<id>       ternary PNG body; 400 on bad labels or
//                                  format, 422 on a size mismatch
//   GET  /api/timing               [{"id", "ms"}, ...]
//   PUT  /api/timing               replaces the log with the JSON body
//   GET  /*                        static assets, when an assets dir is set
//
// Saves replace files atomically; concurrent writers resolve last-write-wins.

#include <filesystem>
#include <memory>
#include <string>

namespace scod {

struct AnnotatorOptions {
  std::filesystem::path root;
  std::string split = "train";
  std::filesystem::path assets_dir;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

class AnnotatorServer {
 public:
  /// Throws ValidationError when the dataset root is not a directory.
  explicit AnnotatorServer(AnnotatorOptions options);
  ~AnnotatorServer();
  AnnotatorServer(const AnnotatorServer&) = delete;
  AnnotatorServer& operator=(const AnnotatorServer&) = delete;

  /// Binds the listening socket and returns the port. Throws
  /// std::runtime_error when the port is unavailable.
  int bind();
  /// Serves until stop(); binds first if needed.
  void listen();
  /// listen() on a background thread; returns once the server accepts.
  void start();
  void stop();
  int port() const;

  std::filesystem::path timing_path() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace scod
