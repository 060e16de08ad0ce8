// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

namespace pbsr {

struct ServiceOptions {
  std::filesystem::path manifest_path;
  /// Directory served at `/`. When empty a small built-in index page is served.
  std::filesystem::path static_dir;
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
};

/// HTTP/JSON curation service over a dataset manifest. The manifest file and
/// the mask PNGs stay the source of truth: every mutation is written through
/// immediately with temp-file + rename.
///
///   GET   /api/samples?state=&type=&size=&split=&page=&page_size=
///   GET   /api/samples/{id}
///   GET   /api/samples/{id}/image
///   GET   /api/samples/{id}/mask
///   PUT   /api/samples/{id}/mask        gray PNG body, optional If-Match
///   PATCH /api/samples/{id}/labels      {blur_type?, intensity?, review_state?}
///   POST  /api/samples/{id}/estimate    {threshold?}
///   GET   /api/stats
///
/// Unknown id -> 404, invalid input -> 422, conflicting write -> 409.
class CurationService {
 public:
  explicit CurationService(ServiceOptions options);
  ~CurationService();
  CurationService(const CurationService&) = delete;
  CurationService& operator=(const CurationService&) = delete;

  /// Binds the listening socket and returns the port. Throws on failure.
  int bind();
  /// Serves until stop(). Calls bind() first if needed.
  void run();
  void stop();

  /// Holds the write lock of one sample, so that concurrent writers see 409.
  std::unique_lock<std::mutex> hold_sample_lock(const std::string& id);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pbsr
