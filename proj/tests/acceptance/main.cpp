// Acceptance run: one PASS/FAIL line per criterion, details in <workdir>/acceptance.json.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>

#include "CLI11.hpp"
#include "acceptance.hpp"

using namespace acceptance;

int main(int argc, char** argv) {
  CLI::App app{"e2eve acceptance checks"};
  Context ctx;
  std::string workdir = "acceptance-run";
  std::string only = "ABCDEFGH";
  app.add_option("--workdir", workdir, "scratch and report directory");
  app.add_option("--only", only, "criteria to run, e.g. ABE");
  app.add_option("--g-seeds", ctx.g_seeds, "seeds for the trend check")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  ctx.workdir = workdir;
  std::filesystem::create_directories(ctx.workdir);

  const std::vector<std::pair<char, std::function<Outcome(const Context&)>>> criteria = {
      {'A', check_synthesis}, {'B', check_quantizer}, {'C', check_artist}, {'D', check_overfit},
      {'E', check_sampling},  {'F', check_metrics},   {'G', check_trends}, {'H', check_service}};

  nlohmann::json report = nlohmann::json::object();
  bool all = true;
  for (const auto& [id, fn] : criteria) {
    if (only.find(id) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& ex) {
      o.pass = false;
      o.summary = std::string("error: ") + ex.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%c %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.summary.c_str(), s);
    std::fflush(stdout);
    o.detail["pass"] = o.pass;
    o.detail["summary"] = o.summary;
    o.detail["wall_seconds"] = s;
    report[std::string(1, id)] = o.detail;
    all = all && o.pass;
    std::ofstream(ctx.workdir / "acceptance.json") << report.dump(2) << "\n";
  }
  return all ? 0 : 1;
}
