#include "sentinel/ledger.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace sentinel {

using nlohmann::json;

std::vector<std::uint8_t> canonical_update_bytes(std::uint64_t round, std::uint64_t client,
                                                 const std::vector<double>& gradient) {
  std::vector<std::uint8_t> out;
  out.reserve(24 + 8 * gradient.size());
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  };
  put_u64(round);
  put_u64(client);
  put_u64(gradient.size());
  for (double x : gradient) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(bits);
  }
  return out;
}

Hash32 commit_hash(const std::vector<std::uint8_t>& bytes) { return sha256(bytes); }

bool verify_commitment(const std::vector<std::uint8_t>& bytes, const Hash32& hash) {
  return sha256(bytes) == hash;
}

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes, int level) {
  z_stream zs{};
  // windowBits 15 + 16 selects the gzip wrapper.
  if (deflateInit2(&zs, level, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    fail(ErrorCode::IoError, "deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorCode::IoError, "gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) fail(ErrorCode::IoError, "inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::IntegrityError, "gzip stream corrupt");
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

Ledger::Ledger(std::filesystem::path root, Options opt) : root_(std::move(root)), opt_(opt) {
  std::error_code ec;
  std::filesystem::create_directories(root_ / "rounds", ec);
  if (ec) fail(ErrorCode::IoError, "cannot create ledger root: " + ec.message());
}

void Ledger::log_event(const std::string& op, const std::string& args_json) {
  if (!opt_.log_events || replaying_) {
    ++seq_;
    return;
  }
  std::ofstream f(root_ / "events.jsonl", std::ios::app);
  if (!f) fail(ErrorCode::IoError, "cannot append to event log");
  f << "{\"seq\":" << seq_ << ",\"op\":\"" << op << "\",\"args\":" << args_json
    << ",\"tick\":" << tick_ << "}\n";
  ++seq_;
}

void Ledger::register_client(const std::string& addr, std::uint64_t id) {
  std::lock_guard<std::mutex> lock(mu_);
  if (clients_.count(addr)) fail(ErrorCode::AlreadyRegistered, "address already registered: " + addr);
  for (const auto& [a, existing] : clients_)
    if (existing == id)
      fail(ErrorCode::AlreadyRegistered, "id already registered: " + std::to_string(id));
  clients_[addr] = id;
  log_event("register", json{{"addr", addr}, {"id", id}}.dump());
}

void Ledger::register_batch(const std::vector<std::string>& addrs,
                            const std::vector<std::uint64_t>& ids) {
  std::lock_guard<std::mutex> lock(mu_);
  if (addrs.size() != ids.size()) fail(ErrorCode::InvalidInput, "batch length mismatch");
  // Validate the whole batch before touching the registry: a conflict anywhere
  // must leave the ledger unchanged.
  for (const auto& a : addrs)
    if (clients_.count(a)) fail(ErrorCode::AlreadyRegistered, "address already registered: " + a);
  for (std::uint64_t id : ids)
    for (const auto& [a, existing] : clients_)
      if (existing == id)
        fail(ErrorCode::AlreadyRegistered, "id already registered: " + std::to_string(id));
  for (std::size_t i = 0; i < addrs.size(); ++i)
    for (std::size_t j = i + 1; j < addrs.size(); ++j)
      if (addrs[i] == addrs[j] || ids[i] == ids[j])
        fail(ErrorCode::AlreadyRegistered, "duplicate entry in batch");
  for (std::size_t i = 0; i < addrs.size(); ++i) clients_[addrs[i]] = ids[i];
  log_event("register_batch", json{{"addrs", addrs}, {"ids", ids}}.dump());
}

std::optional<std::uint64_t> Ledger::lookup_client(const std::string& addr) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = clients_.find(addr);
  if (it == clients_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Ledger::start_round() {
  std::lock_guard<std::mutex> lock(mu_);
  if (current_) fail(ErrorCode::InvalidInput, "a round is already open");
  RoundRecord r;
  r.id = rounds_.size();
  r.start_tick = tick_;
  rounds_.push_back(r);
  current_ = r.id;
  log_event("start_round", json{{"round", r.id}}.dump());
  return r.id;
}

void Ledger::submit_update(std::uint64_t client, const Hash32& hash) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!current_) fail(ErrorCode::NoOpenRound, "no open round");
  bool registered = false;
  for (const auto& [addr, id] : clients_)
    if (id == client) { registered = true; break; }
  if (!registered) fail(ErrorCode::Unregistered, "client not registered");
  RoundRecord& r = rounds_[*current_];
  if (r.submissions.count(client))
    fail(ErrorCode::DuplicateSubmission, "client already submitted this round");
  r.submissions[client] = hash;
  log_event("submit", json{{"round", r.id}, {"client", client}, {"hash", hash_hex(hash)}}.dump());
}

void Ledger::finalize_round(const Hash32& aggregate_hash) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!current_) fail(ErrorCode::NoOpenRound, "no open round");
  RoundRecord& r = rounds_[*current_];
  r.aggregate_hash = aggregate_hash;
  r.status = RoundStatus::Finalized;
  r.end_tick = tick_;
  log_event("finalize",
            json{{"round", r.id}, {"aggregate_hash", hash_hex(aggregate_hash)}}.dump());
  current_.reset();
  apply_retention();
}

void Ledger::apply_retention() {
  if (opt_.keep_rounds < 0) return;
  const std::uint64_t finalized = rounds_.size();  // called right after finalize
  if (finalized <= static_cast<std::uint64_t>(opt_.keep_rounds)) return;
  const std::uint64_t cutoff = finalized - static_cast<std::uint64_t>(opt_.keep_rounds);
  for (std::uint64_t id = 0; id < cutoff; ++id) {
    RoundRecord& r = rounds_[id];
    if (r.purged) continue;
    std::error_code ec;
    std::filesystem::remove_all(root_ / "rounds" / std::to_string(id), ec);
    r.purged = true;
    log_event("purge", json{{"round", id}}.dump());
  }
}

const RoundRecord& Ledger::round_ref(std::uint64_t id) const {
  if (id >= rounds_.size()) fail(ErrorCode::UnknownRound, "unknown round " + std::to_string(id));
  return rounds_[id];
}

RoundRecord Ledger::get_round_info(std::uint64_t id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return round_ref(id);
}

bool Ledger::has_submitted(std::uint64_t id, std::uint64_t client) const {
  std::lock_guard<std::mutex> lock(mu_);
  return round_ref(id).submissions.count(client) > 0;
}

Hash32 Ledger::get_update_hash(std::uint64_t id, std::uint64_t client) const {
  std::lock_guard<std::mutex> lock(mu_);
  const RoundRecord& r = round_ref(id);
  auto it = r.submissions.find(client);
  if (it == r.submissions.end()) fail(ErrorCode::UnknownRound, "client did not submit");
  return it->second;
}

std::optional<std::uint64_t> Ledger::current_round() const {
  std::lock_guard<std::mutex> lock(mu_);
  return current_;
}

std::filesystem::path Ledger::store_blob(std::uint64_t round, std::uint64_t client,
                                         const std::vector<std::uint8_t>& bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto dir = root_ / "rounds" / std::to_string(round);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create blob directory");
  const auto path =
      dir / (std::to_string(client) + (opt_.compress_blobs ? ".grad.gz" : ".grad"));
  const std::vector<std::uint8_t> payload =
      opt_.compress_blobs ? gzip_compress(bytes, 6) : bytes;
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot write blob");
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  f.close();
  log_event("store_blob", json{{"round", round},
                               {"client", client},
                               {"path", path.filename().string()},
                               {"compressed", opt_.compress_blobs}}.dump());
  return path;
}

std::vector<std::uint8_t> Ledger::load_blob(std::uint64_t round, std::uint64_t client) const {
  std::lock_guard<std::mutex> lock(mu_);
  const RoundRecord& r = round_ref(round);
  if (r.purged) fail(ErrorCode::PurgedError, "round blobs purged by retention");
  const auto dir = root_ / "rounds" / std::to_string(round);
  const auto gz = dir / (std::to_string(client) + ".grad.gz");
  const auto raw = dir / (std::to_string(client) + ".grad");
  const bool compressed = std::filesystem::exists(gz);
  const auto path = compressed ? gz : raw;
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "blob not found: " + path.string());
  std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
  std::vector<std::uint8_t> bytes = compressed ? gzip_decompress(payload) : payload;
  auto it = r.submissions.find(client);
  if (it != r.submissions.end() && !verify_commitment(bytes, it->second))
    fail(ErrorCode::IntegrityError, "blob does not match committed hash");
  return bytes;
}

void Ledger::advance_tick(std::uint64_t ticks) {
  std::lock_guard<std::mutex> lock(mu_);
  tick_ += ticks;
}

std::uint64_t Ledger::tick() const {
  std::lock_guard<std::mutex> lock(mu_);
  return tick_;
}

std::uint64_t Ledger::event_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return seq_;
}

std::unique_ptr<Ledger> Ledger::replay(const std::filesystem::path& root) {
  Options opt;
  opt.log_events = false;
  auto led_ptr = std::make_unique<Ledger>(root, opt);
  Ledger& led = *led_ptr;
  led.replaying_ = true;
  std::ifstream f(root / "events.jsonl");
  if (!f) fail(ErrorCode::IoError, "no event log to replay");
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json ev = json::parse(line);
    const std::string op = ev.at("op");
    led.tick_ = ev.at("tick").get<std::uint64_t>();
    const json& a = ev.at("args");
    if (op == "register") {
      led.register_client(a.at("addr"), a.at("id"));
    } else if (op == "register_batch") {
      led.register_batch(a.at("addrs").get<std::vector<std::string>>(),
                         a.at("ids").get<std::vector<std::uint64_t>>());
    } else if (op == "start_round") {
      led.start_round();
    } else if (op == "submit") {
      led.submit_update(a.at("client"), hash_from_hex(a.at("hash")));
    } else if (op == "finalize") {
      led.finalize_round(hash_from_hex(a.at("aggregate_hash")));
    } else if (op == "purge") {
      const std::uint64_t id = a.at("round");
      if (id < led.rounds_.size()) led.rounds_[id].purged = true;
    }
    // store_blob events carry no ledger state beyond the hash already
    // recorded by the matching submit.
  }
  led.replaying_ = false;
  return led_ptr;
}

std::string Ledger::state_digest() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::ostringstream os;
  for (const auto& [addr, id] : clients_) os << "C " << addr << " " << id << "\n";
  for (const auto& r : rounds_) {
    os << "R " << r.id << " " << (r.status == RoundStatus::Finalized ? "F" : "O") << " "
       << r.start_tick << " " << r.end_tick << " " << (r.purged ? 1 : 0) << " "
       << (r.aggregate_hash ? hash_hex(*r.aggregate_hash) : std::string("-")) << "\n";
    for (const auto& [cid, h] : r.submissions) os << "S " << cid << " " << hash_hex(h) << "\n";
  }
  const std::string s = os.str();
  return hash_hex(sha256(std::vector<std::uint8_t>(s.begin(), s.end())));
}

}  // namespace sentinel
