#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "hubsim/checks.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  bool ok = true;
  hubsim::run_checks(hubsim::CheckOptions{}, ids, [&](const hubsim::CheckResult& r) {
    std::printf("%s\n", r.line().c_str());
    std::fflush(stdout);
    ok = ok && r.passed;
  });
  return ok ? 0 : 1;
}
