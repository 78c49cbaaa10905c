#include "scod/annotator.hpp"

#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "scod/data.hpp"
#include "scod/errors.hpp"

namespace scod {

namespace fs = std::filesystem;

namespace {

bool valid_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return id.find_first_of("/\\") == std::string::npos && id.find('\0') == std::string::npos;
}

std::string mime_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  return "application/octet-stream";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  static std::atomic<unsigned> counter{0};
  const auto tmp = path.string() + ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

}  // namespace

struct AnnotatorServer::Impl {
  AnnotatorOptions options;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::mutex timing_mutex;

  DatasetManifest manifest() const {
    DatasetManifest m;
    m.root = options.root;
    m.split = options.split;
    m.kind = SplitKind::kTrain;
    if (fs::is_directory(m.split_dir() / m.images_dir)) m = DatasetManifest::open(options.root, options.split, SplitKind::kTrain);
    return m;
  }

  void routes() {
    server.Get("/api/images", [this](const httplib::Request&, httplib::Response& res) {
      const auto m = manifest();
      auto list = nlohmann::json::array();
      auto ids = m.ids;
      std::sort(ids.begin(), ids.end());
      for (const auto& id : ids) list.push_back({{"id", id}, {"has_scribble", fs::exists(m.scribble_path(id))}});
      res.set_content(list.dump(), "application/json");
    });

    server.Get(R"(/api/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      if (!valid_id(id)) return send_error(res, 400, "invalid id");
      const auto m = manifest();
      const auto path = m.contains(id) ? m.image_path(id) : std::nullopt;
      if (!path) return send_error(res, 404, "unknown image: " + id);
      res.set_content(read_file(*path), mime_for(*path));
    });

    server.Get(R"(/api/scribbles/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      if (!valid_id(id)) return send_error(res, 400, "invalid id");
      const auto path = manifest().scribble_path(id);
      if (!fs::exists(path)) return send_error(res, 404, "no scribble for " + id);
      res.set_content(read_file(path), "image/png");
    });

    server.Put(R"(/api/scribbles/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      if (!valid_id(id)) return send_error(res, 400, "invalid id");
      const auto m = manifest();
      const auto image_path = m.contains(id) ? m.image_path(id) : std::nullopt;
      if (!image_path) return send_error(res, 404, "unknown image: " + id);
      ScribbleMap map;
      try {
        const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
        map = decode_scribble(std::span<const std::uint8_t>(data, req.body.size()));
      } catch (const ValidationError& e) {
        return send_error(res, 400, e.what());
      }
      const auto image = read_image(*image_path);
      if (map.height() != image.height() || map.width() != image.width()) {
        return send_error(res, 422, "scribble size does not match the image");
      }
      try {
        write_atomic(m.scribble_path(id), req.body);
      } catch (const std::exception& e) {
        return send_error(res, 500, e.what());
      }
      res.status = 204;
    });

    server.Get("/api/timing", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(timing_mutex);
      const auto path = timing_file();
      res.set_content(fs::exists(path) ? read_file(path) : "[]", "application/json");
    });

    server.Put("/api/timing", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json log;
      try {
        log = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        return send_error(res, 400, "timing log must be JSON");
      }
      if (!log.is_array()) return send_error(res, 400, "timing log must be an array");
      for (const auto& e : log) {
        if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("ms") ||
            !e["ms"].is_number() || e["ms"].get<double>() < 0) {
          return send_error(res, 400, "timing entries need a string id and a non-negative ms");
        }
      }
      std::lock_guard lock(timing_mutex);
      try {
        write_atomic(timing_file(), log.dump());
      } catch (const std::exception& e) {
        return send_error(res, 500, e.what());
      }
      res.status = 204;
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      } catch (...) {
        send_error(res, 500, "unknown error");
      }
    });

    if (!options.assets_dir.empty()) server.set_mount_point("/", options.assets_dir.string());
  }

  fs::path timing_file() const { return options.root / options.split / "annotation_timing.json"; }
};

AnnotatorServer::AnnotatorServer(AnnotatorOptions options) : impl_(std::make_unique<Impl>()) {
  if (!fs::is_directory(options.root)) throw ValidationError("dataset root is not a directory: " + options.root.string());
  if (!options.assets_dir.empty() && !fs::is_directory(options.assets_dir)) {
    throw ValidationError("assets dir is not a directory: " + options.assets_dir.string());
  }
  impl_->options = std::move(options);
  impl_->routes();
  // SO_REUSEPORT (the library default) would let a second server share a busy port.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
}

AnnotatorServer::~AnnotatorServer() { stop(); }

int AnnotatorServer::bind() {
  if (impl_->port >= 0) return impl_->port;
  const auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(o.host);
    if (impl_->port < 0) throw std::runtime_error("cannot bind " + o.host);
  } else {
    if (!impl_->server.bind_to_port(o.host, o.port)) {
      throw std::runtime_error("port " + std::to_string(o.port) + " is busy or unavailable on " + o.host);
    }
    impl_->port = o.port;
  }
  return impl_->port;
}

void AnnotatorServer::listen() {
  bind();
  impl_->server.listen_after_bind();
}

void AnnotatorServer::start() {
  bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void AnnotatorServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int AnnotatorServer::port() const { return impl_->port; }

fs::path AnnotatorServer::timing_path() const { return impl_->timing_file(); }

}  // namespace scod
