import sys


def running_max(values):
    result = []
    best = 0
    for i, v in enumerate(values):
        best = max(best, v)
        result.append(best)
    return result


def main():
    data = sys.stdin.read().split()
    n = int(data[0])
    values = [int(x) for x in data[1:1 + n]]
    print(" ".join(str(x) for x in running_max(values)))


main()
