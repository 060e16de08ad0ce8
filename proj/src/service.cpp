// SPDX-License-Identifier: Apache-2.0

#include "pbsr/service.hpp"

#include <httplib.h>

#include <cstdio>
#include <json.hpp>
#include <map>
#include <optional>
#include <shared_mutex>
#include <stdexcept>

#include "pbsr/dataset.hpp"
#include "pbsr/errors.hpp"
#include "pbsr/image_io.hpp"

namespace pbsr {

namespace {

using nlohmann::json;

constexpr const char* kBuiltinIndex =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>PBSR curation</title></head>"
    "<body><h1>PBSR curation service</h1><p>The API is served under <code>/api</code>. "
    "Start the service with a static directory to serve the review UI here.</p></body></html>";

struct HttpError {
  int status;
  std::string reason;
};

std::string etag_of(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "\"%016llx\"", static_cast<unsigned long long>(h));
  return buf;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_png(httplib::Response& res, const std::vector<std::uint8_t>& bytes) {
  res.status = 200;
  res.set_header("ETag", etag_of(bytes));
  res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), "image/png");
}

std::size_t parse_positive(const httplib::Request& req, const std::string& key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string raw = req.get_param_value(key);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(raw, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (raw.empty() || raw.front() == '-' || pos != raw.size() || v == 0) {
    throw HttpError{422, "query parameter '" + key + "' must be a positive integer"};
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

struct CurationService::Impl {
  ServiceOptions options;
  httplib::Server server;
  int port = -1;
  std::mutex run_mutex;
  bool started = false;
  bool stopped = false;

  std::shared_mutex manifest_mutex;
  DatasetManifest manifest;
  std::map<std::string, std::unique_ptr<std::mutex>> sample_locks;

  explicit Impl(ServiceOptions o) : options(std::move(o)) {
    manifest = DatasetManifest::load(options.manifest_path);
    for (const auto& s : manifest.samples()) sample_locks.emplace(s.id, std::make_unique<std::mutex>());
    routes();
  }

  // ---- helpers ------------------------------------------------------------

  BlurSample snapshot(const std::string& id) {
    std::shared_lock lock(manifest_mutex);
    const BlurSample* s = manifest.find(id);
    if (!s) throw HttpError{404, "unknown sample '" + id + "'"};
    return *s;
  }

  std::filesystem::path hr_file(const BlurSample& s) {
    std::shared_lock lock(manifest_mutex);
    return manifest.hr_file(s);
  }
  std::filesystem::path mask_file(const BlurSample& s) {
    std::shared_lock lock(manifest_mutex);
    return manifest.mask_file(s);
  }

  std::unique_lock<std::mutex> try_lock_sample(const std::string& id) {
    auto it = sample_locks.find(id);
    if (it == sample_locks.end()) throw HttpError{404, "unknown sample '" + id + "'"};
    std::unique_lock<std::mutex> lock(*it->second, std::try_to_lock);
    if (!lock.owns_lock()) throw HttpError{409, "sample '" + id + "' is being modified"};
    return lock;
  }

  template <typename F>
  BlurSample mutate(const std::string& id, F&& f) {
    std::unique_lock lock(manifest_mutex);
    BlurSample* s = manifest.find(id);
    f(*s);
    manifest.save(options.manifest_path);
    return *s;
  }

  json summary(const BlurSample& s, const Tensor& mask) {
    const double fraction = blur_area_fraction(mask);
    return json{{"id", s.id},
                {"blur_type", to_string(s.blur_type)},
                {"intensity", to_string(s.intensity)},
                {"source", to_string(s.source)},
                {"review_state", to_string(s.review_state)},
                {"split", s.split},
                {"fraction", fraction},
                {"size_category", to_string(size_category(fraction))}};
  }

  json record(const BlurSample& s) {
    const Tensor mask = read_mask(mask_file(s));
    json j = summary(s, mask);
    j["hr_path"] = s.hr_path;
    j["mask_path"] = s.mask_path;
    j["height"] = mask.shape().h;
    j["width"] = mask.shape().w;
    return j;
  }

  // ---- handlers -----------------------------------------------------------

  template <typename F>
  httplib::Server::Handler wrap(F&& f) {
    return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, e.status, json{{"error", e.reason}});
      } catch (const std::exception& e) {
        send_json(res, 500, json{{"error", e.what()}});
      }
    };
  }

  void list_samples(const httplib::Request& req, httplib::Response& res) {
    std::optional<ReviewState> state;
    std::optional<BlurType> type;
    std::optional<std::string> size, split;
    try {
      if (req.has_param("state")) state = parse_review_state(req.get_param_value("state"));
      if (req.has_param("type")) type = parse_blur_type(req.get_param_value("type"));
    } catch (const std::invalid_argument& e) {
      throw HttpError{422, e.what()};
    }
    if (req.has_param("size")) {
      size = req.get_param_value("size");
      if (*size != "small" && *size != "medium" && *size != "large") throw HttpError{422, "unknown size '" + *size + "'"};
    }
    if (req.has_param("split")) split = req.get_param_value("split");
    const std::size_t page = parse_positive(req, "page", 1);
    const std::size_t page_size = std::min<std::size_t>(parse_positive(req, "page_size", 50), 1000);

    std::vector<BlurSample> samples;
    {
      std::shared_lock lock(manifest_mutex);
      samples = manifest.samples();
    }
    json items = json::array();
    std::size_t total = 0;
    const std::size_t first = (page - 1) * page_size;
    for (const auto& s : samples) {
      if (state && s.review_state != *state) continue;
      if (type && s.blur_type != *type) continue;
      if (split && s.split != *split) continue;
      std::optional<json> item;
      if (size) {
        item = summary(s, read_mask(mask_file(s)));
        if ((*item)["size_category"] != *size) continue;
      }
      if (total >= first && total < first + page_size) {
        items.push_back(item ? *item : summary(s, read_mask(mask_file(s))));
      }
      ++total;
    }
    send_json(res, 200, json{{"total", total}, {"page", page}, {"page_size", page_size}, {"items", items}});
  }

  void put_mask(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const BlurSample s = snapshot(id);
    auto lock = try_lock_sample(id);
    const auto path = mask_file(s);
    if (req.has_header("If-Match")) {
      const std::string expected = req.get_header_value("If-Match");
      if (expected != "*" && expected != etag_of(read_file(path))) {
        throw HttpError{409, "mask changed since it was fetched"};
      }
    }
    const std::vector<std::uint8_t> body(req.body.begin(), req.body.end());
    Raster raster;
    try {
      raster = decode_png(body, 1);
    } catch (const FormatError& e) {
      throw HttpError{422, std::string("invalid png: ") + e.what()};
    }
    try {
      mask_from_raster(raster);
    } catch (const std::invalid_argument& e) {
      throw HttpError{422, e.what()};
    }
    const Raster hr = decode_png(read_file(hr_file(s)), 3);
    if (raster.width != hr.width || raster.height != hr.height) {
      throw HttpError{422, "mask size " + std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                               " does not match image size " + std::to_string(hr.width) + "x" +
                               std::to_string(hr.height)};
    }
    write_file_atomic(path, body);
    const BlurSample updated = mutate(id, [](BlurSample& r) { r.review_state = ReviewState::human_verified; });
    res.set_header("ETag", etag_of(body));
    send_json(res, 200, record(updated));
  }

  void patch_labels(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    snapshot(id);
    auto lock = try_lock_sample(id);
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      throw HttpError{422, "body is not valid JSON"};
    }
    if (!body.is_object()) throw HttpError{422, "body must be a JSON object"};
    std::optional<BlurType> type;
    std::optional<Intensity> intensity;
    std::optional<ReviewState> state;
    for (const auto& [key, value] : body.items()) {
      if (!value.is_string()) throw HttpError{422, "field '" + key + "' must be a string"};
      const std::string v = value.get<std::string>();
      try {
        if (key == "blur_type") {
          type = parse_blur_type(v);
        } else if (key == "intensity") {
          intensity = parse_intensity(v);
        } else if (key == "review_state") {
          state = parse_review_state(v);
        } else {
          throw HttpError{422, "unknown field '" + key + "'"};
        }
      } catch (const std::invalid_argument& e) {
        throw HttpError{422, e.what()};
      }
    }
    if (state == ReviewState::automatic) {
      throw HttpError{422, "review_state 'auto' is only set by re-estimating the mask"};
    }
    const BlurSample updated = mutate(id, [&](BlurSample& r) {
      if (type) r.blur_type = *type;
      if (intensity) r.intensity = *intensity;
      if (state) r.review_state = *state;
    });
    send_json(res, 200, record(updated));
  }

  void estimate(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const BlurSample s = snapshot(id);
    auto lock = try_lock_sample(id);
    float threshold = 0.5f;
    if (!req.body.empty()) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        throw HttpError{422, "body is not valid JSON"};
      }
      if (!body.is_object()) throw HttpError{422, "body must be a JSON object"};
      for (const auto& [key, value] : body.items()) {
        if (key != "threshold") throw HttpError{422, "unknown field '" + key + "'"};
        if (!value.is_number()) throw HttpError{422, "threshold must be a number"};
        const double t = value.get<double>();
        if (!(t >= 0.0 && t <= 1.0)) throw HttpError{422, "threshold must lie in [0, 1]"};
        threshold = static_cast<float>(t);
      }
    }
    const Tensor mask = estimate_blur_map(read_rgb(hr_file(s)), kDefaultEstimateWindow, threshold);
    const std::vector<std::uint8_t> bytes = encode_png(to_raster(mask));
    write_file_atomic(mask_file(s), bytes);
    mutate(id, [](BlurSample& r) { r.review_state = ReviewState::automatic; });
    send_png(res, bytes);
  }

  void stats(httplib::Response& res) {
    std::vector<BlurSample> samples;
    {
      std::shared_lock lock(manifest_mutex);
      samples = manifest.samples();
    }
    json j{{"total", samples.size()},
           {"blur_type", json::object()},
           {"intensity", json::object()},
           {"size_category", json::object()},
           {"review_state", json::object()},
           {"split", json::object()}};
    for (const char* k : {"defocus", "motion", "none"}) j["blur_type"][k] = 0;
    for (const char* k : {"little", "middle", "heavy", "unlabeled"}) j["intensity"][k] = 0;
    for (const char* k : {"small", "medium", "large"}) j["size_category"][k] = 0;
    for (const char* k : {"auto", "human_verified", "rejected"}) j["review_state"][k] = 0;
    auto bump = [](json& counts, const std::string& key) { counts[key] = counts.value(key, 0) + 1; };
    for (const auto& s : samples) {
      bump(j["blur_type"], to_string(s.blur_type));
      bump(j["intensity"], to_string(s.intensity));
      bump(j["review_state"], to_string(s.review_state));
      bump(j["split"], s.split);
      bump(j["size_category"], to_string(size_category(blur_area_fraction(read_mask(mask_file(s))))));
    }
    send_json(res, 200, j);
  }

  void routes() {
    const std::string one = R"(/api/samples/([^/]+))";
    server.Get("/api/samples", wrap([this](const auto& req, auto& res) { list_samples(req, res); }));
    server.Get("/api/stats", wrap([this](const auto&, auto& res) { stats(res); }));
    server.Get(one, wrap([this](const auto& req, auto& res) {
                 send_json(res, 200, record(snapshot(req.matches[1])));
               }));
    server.Get(one + "/image", wrap([this](const auto& req, auto& res) {
                 send_png(res, read_file(hr_file(snapshot(req.matches[1]))));
               }));
    server.Get(one + "/mask", wrap([this](const auto& req, auto& res) {
                 send_png(res, read_file(mask_file(snapshot(req.matches[1]))));
               }));
    server.Put(one + "/mask", wrap([this](const auto& req, auto& res) { put_mask(req, res); }));
    server.Patch(one + "/labels", wrap([this](const auto& req, auto& res) { patch_labels(req, res); }));
    server.Post(one + "/estimate", wrap([this](const auto& req, auto& res) { estimate(req, res); }));

    if (!options.static_dir.empty()) {
      if (!server.set_mount_point("/", options.static_dir.string())) {
        throw ConfigError("static directory not found: " + options.static_dir.string());
      }
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kBuiltinIndex, "text/html"); });
    }
  }
};

CurationService::CurationService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

CurationService::~CurationService() { stop(); }

int CurationService::bind() {
  if (impl_->port >= 0) return impl_->port;
  const int port = impl_->options.port == 0 ? impl_->server.bind_to_any_port(impl_->options.host)
                                            : (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)
                                                   ? impl_->options.port
                                                   : -1);
  if (port < 0) {
    throw std::runtime_error("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  impl_->port = port;
  return port;
}

void CurationService::run() {
  bind();
  {
    std::lock_guard lock(impl_->run_mutex);
    if (impl_->stopped) return;
    impl_->started = true;
  }
  impl_->server.listen_after_bind();
}

void CurationService::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->run_mutex);
    impl_->stopped = true;
    if (!impl_->started) return;
  }
  impl_->server.wait_until_ready();
  impl_->server.stop();
}

std::unique_lock<std::mutex> CurationService::hold_sample_lock(const std::string& id) {
  auto it = impl_->sample_locks.find(id);
  if (it == impl_->sample_locks.end()) throw std::invalid_argument("unknown sample '" + id + "'");
  return std::unique_lock<std::mutex>(*it->second);
}

}  // namespace pbsr
