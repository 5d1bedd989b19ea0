// fedgate: run the gateway, drive benchmarks, mint tokens.
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "fedgate/bench/bench.hpp"
#include "fedgate/gateway/config.hpp"
#include "fedgate/gateway/gateway.hpp"
#include "fedgate/server/http_frontend.hpp"

using nlohmann::json;
using namespace fedgate;

namespace {

std::function<void()> g_on_signal;

void handle_signal(int) {
  if (g_on_signal) g_on_signal();
}

void install_signal_handlers(std::function<void()> fn) {
  g_on_signal = std::move(fn);
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
}

gateway::ServiceConfig config_or_default(const std::string& path) {
  return path.empty() ? gateway::default_config() : gateway::load_config(path);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string csv_path_for(const std::string& json_path) {
  const auto dot = json_path.rfind('.');
  const auto slash = json_path.rfind('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return json_path + ".csv";
  return json_path.substr(0, dot) + ".csv";
}

std::vector<double> parse_rates(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(bench::parse_rate(item));
  }
  return out;
}

std::vector<int> parse_ints(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

struct WorkloadArgs {
  std::string model = bench::WorkloadSpec{}.model;
  int n = 1000;
  std::string rate = "inf";
  std::string mode = "online";
  std::uint64_t seed = 0;
  bool stream = false;
  int concurrency = 0;
  int pool = 512;
  int users = 1;
  double duration_cap = 0.0;
  double max_error_rate = 0.05;
  bool fixed = false;
  int prompt_tokens = 128;
  int output_tokens = 128;
};

void add_workload_options(CLI::App* cmd, WorkloadArgs& w) {
  cmd->add_option("--model", w.model, "Model name");
  cmd->add_option("--n", w.n, "Number of requests")->check(CLI::PositiveNumber);
  cmd->add_option("--rate", w.rate, "Arrival rate in req/s, or inf");
  cmd->add_option("--mode", w.mode, "online or batch")->check(CLI::IsMember({"online", "batch"}));
  cmd->add_option("--seed", w.seed, "Workload seed");
  cmd->add_flag("--stream", w.stream, "Use SSE streaming");
  cmd->add_option("--concurrency", w.concurrency, "Closed-loop sessions (0 = open loop)");
  cmd->add_option("--pool", w.pool, "Max in-flight requests for rate=inf (0 = unbounded)");
  cmd->add_option("--users", w.users, "Distinct principals")->check(CLI::PositiveNumber);
  cmd->add_option("--duration-cap", w.duration_cap, "Stop sending after this many seconds (0 = none)");
  cmd->add_option("--max-error-rate", w.max_error_rate, "Abort when the error rate exceeds this");
  cmd->add_flag("--fixed-lengths", w.fixed, "Use fixed prompt/output lengths");
  cmd->add_option("--prompt-tokens", w.prompt_tokens, "Fixed prompt length");
  cmd->add_option("--output-tokens", w.output_tokens, "Fixed output length");
}

bench::WorkloadSpec to_spec(const WorkloadArgs& w) {
  bench::WorkloadSpec s;
  s.model = w.model;
  s.n_requests = w.n;
  s.rate = bench::parse_rate(w.rate);
  s.mode = w.mode == "batch" ? bench::Mode::kBatch : bench::Mode::kOnline;
  s.seed = w.seed;
  s.stream = w.stream;
  s.concurrency = w.concurrency;
  s.pool = w.pool;
  s.users = w.users;
  s.duration_cap_s = w.duration_cap;
  s.max_error_rate = w.max_error_rate;
  s.lengths.fixed = w.fixed;
  s.lengths.prompt_tokens = w.prompt_tokens;
  s.lengths.output_tokens = w.output_tokens;
  return s;
}

void print_summary(const bench::BenchReport& r) {
  std::cout << "target:            " << r.target << "\n"
            << "requests:          " << r.sent << " sent, " << r.succeeded << " ok, " << r.failed << " failed\n"
            << "duration:          " << r.duration_s << " s\n"
            << "request tput:      " << r.request_throughput << " req/s\n"
            << "output token tput: " << r.output_token_throughput << " tok/s\n"
            << "median latency:    " << r.median_e2e_latency_s << " s\n"
            << "p99 latency:       " << r.p99_e2e_latency_s << " s\n";
  if (r.batch_processing_s) std::cout << "batch processing:  " << *r.batch_processing_s << " s\n";
  if (r.aborted) std::cout << "ABORTED: " << r.abort_reason << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedgate: federated inference gateway"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the gateway over HTTP");
  std::string serve_config;
  std::string serve_host;
  int serve_port = -1;
  std::string token_file;
  serve->add_option("--config", serve_config, "Service config (JSON); built-in defaults when omitted");
  serve->add_option("--host", serve_host, "Listen address (overrides config)");
  serve->add_option("--port", serve_port, "Listen port, 0 = any (overrides config)");
  serve->add_option("--token-file", token_file, "Write minted user tokens here as JSON");

  // idp
  auto* idp = app.add_subcommand("idp", "Run a standalone identity provider");
  std::string idp_host = "127.0.0.1";
  int idp_port = 8180;
  idp->add_option("--host", idp_host);
  idp->add_option("--port", idp_port);

  // token
  auto* token = app.add_subcommand("token", "Token utilities");
  token->require_subcommand(1);
  auto* mint = token->add_subcommand("mint", "Mint a token on a running gateway or IdP");
  std::string mint_url;
  std::string mint_admin;
  std::string mint_subject;
  std::vector<std::string> mint_groups;
  double mint_ttl = 0;
  mint->add_option("--url", mint_url, "Mint endpoint, e.g. http://host:8080/idp/mint")->required();
  mint->add_option("--admin-token", mint_admin, "Admin bearer token (gateway-mounted IdP)");
  mint->add_option("--subject", mint_subject)->required();
  mint->add_option("--group", mint_groups, "Group (repeatable)");
  mint->add_option("--ttl", mint_ttl, "Lifetime in seconds");

  // bench
  auto* benchcmd = app.add_subcommand("bench", "Benchmark harness");
  benchcmd->require_subcommand(1);
  auto* run = benchcmd->add_subcommand("run", "Run one workload");
  WorkloadArgs run_w;
  add_workload_options(run, run_w);
  std::string run_config;
  std::string run_out;
  std::string run_url;
  std::string run_token;
  int run_prewarm = 0;
  int run_max_instances = 0;
  bool run_keep_limits = false;
  run->add_option("--config", run_config, "Service config for in-process runs");
  run->add_option("--out", run_out, "Report path (JSON); a CSV of records is written next to it");
  run->add_option("--url", run_url, "Target a live server instead of an in-process gateway");
  run->add_option("--token", run_token, "Bearer token for --url");
  run->add_option("--prewarm", run_prewarm, "Instances to bring up before sending (in-process)");
  run->add_option("--max-instances", run_max_instances, "Override max instances per model (in-process)");
  run->add_flag("--rate-limit", run_keep_limits, "Keep the per-user rate limiter enabled (in-process)");

  auto* sweep = benchcmd->add_subcommand("sweep", "Grid over rates and instance counts (in-process)");
  WorkloadArgs sweep_w;
  add_workload_options(sweep, sweep_w);
  std::string sweep_config;
  std::string sweep_rates = "inf";
  std::string sweep_instances = "1";
  std::string sweep_conc;
  std::string sweep_out;
  sweep->add_option("--config", sweep_config, "Service config for in-process runs");
  sweep->add_option("--rates", sweep_rates, "Comma-separated rates, e.g. 1,5,10,20,inf");
  sweep->add_option("--instances", sweep_instances, "Comma-separated instance counts");
  sweep->add_option("--concurrencies", sweep_conc, "Comma-separated closed-loop session counts");
  sweep->add_option("--out", sweep_out, "Table path (JSON); CSV written next to it");

  CLI11_PARSE(app, argc, argv);

  try {
    if (serve->parsed()) {
      auto config = config_or_default(serve_config);
      config.clock = ClockMode::kWall;
      if (!serve_host.empty()) config.host = serve_host;
      if (serve_port >= 0) config.port = serve_port;
      const auto users = config.users;
      server::FrontendOptions opts;
      opts.host = config.host;
      opts.port = config.port;
      gateway::Gateway gw(std::move(config));
      json tokens = json::object();
      for (const auto& u : users) tokens[u.subject] = gw.mint_token(u.subject, u.groups).raw;
      server::HttpFrontend front(gw, opts);
      const int port = front.start();
      std::cout << "listening on " << front.base_url() << " (port " << port << ")\n";
      for (const auto& [subject, tok] : tokens.items()) std::cout << "token " << subject << " " << tok.get<std::string>() << "\n";
      std::cout.flush();
      if (!token_file.empty()) write_file(token_file, json{{"base_url", front.base_url()}, {"tokens", tokens}}.dump(2));
      install_signal_handlers([&front] { std::thread([&front] { front.stop(); }).detach(); });
      front.wait();
      return 0;
    }

    if (idp->parsed()) {
      EventLoop loop(ClockMode::kWall);
      auth::MockIdentityProvider provider(loop);
      server::IdpServer srv(provider, idp_host, idp_port);
      srv.start();
      std::cout << "identity provider on " << srv.base_url() << "\n" << std::flush;
      std::mutex mu;
      std::condition_variable cv;
      bool done = false;
      install_signal_handlers([&] {
        std::thread([&] {
          std::lock_guard lock(mu);
          done = true;
          cv.notify_all();
        }).detach();
      });
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return done; });
      srv.stop();
      return 0;
    }

    if (mint->parsed()) {
      const auto scheme = mint_url.find("://");
      const auto slash = mint_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
      const std::string origin = slash == std::string::npos ? mint_url : mint_url.substr(0, slash);
      const std::string path = slash == std::string::npos ? "/mint" : mint_url.substr(slash);
      httplib::Client cli(origin);
      httplib::Headers headers;
      if (!mint_admin.empty()) headers.emplace("Authorization", "Bearer " + mint_admin);
      json body = {{"subject", mint_subject}, {"groups", mint_groups}};
      if (mint_ttl > 0) body["ttl_s"] = mint_ttl;
      auto res = cli.Post(path, headers, body.dump(), "application/json");
      if (!res) {
        std::cerr << "request failed: " << httplib::to_string(res.error()) << "\n";
        return 1;
      }
      std::cout << res->body << "\n";
      return res->status == 200 ? 0 : 1;
    }

    if (run->parsed()) {
      const auto spec = to_spec(run_w);
      bench::BenchReport report;
      if (!run_url.empty()) {
        report = bench::run_http(spec, run_url, run_token);
      } else {
        bench::InprocOptions opts;
        opts.prewarm_instances = run_prewarm;
        if (run_max_instances > 0) opts.max_instances = run_max_instances;
        opts.disable_rate_limit = !run_keep_limits;
        report = bench::run_inproc(spec, config_or_default(run_config), opts);
      }
      print_summary(report);
      if (!run_out.empty()) {
        write_file(run_out, bench::to_json(report).dump(2));
        write_file(csv_path_for(run_out), bench::records_csv(report));
      }
      return report.aborted ? 2 : 0;
    }

    if (sweep->parsed()) {
      bench::SweepSpec s;
      s.base = to_spec(sweep_w);
      s.rates = parse_rates(sweep_rates);
      s.instances = parse_ints(sweep_instances);
      s.concurrencies = parse_ints(sweep_conc);
      auto table = bench::run_sweep(s, config_or_default(sweep_config));
      std::cout << bench::sweep_csv(table);
      if (!sweep_out.empty()) {
        write_file(sweep_out, bench::to_json(table).dump(2));
        write_file(csv_path_for(sweep_out), bench::sweep_csv(table));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
