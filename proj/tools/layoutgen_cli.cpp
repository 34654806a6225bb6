#include <cstdio>

int main() {
    std::printf("layoutgen: subcommands pending\n");
    return 1;
}
