import sys


def count_ones(derived):
    n = len(derived)
    original = [0] * n
    for i in range(n - 1):
        original[i + 1] = derived[i] ^ original[i + 1]
    count = 0
    for bit in original:
        count += bit
    return count


def main():
    data = sys.stdin.read().split()
    n = int(data[0])
    derived = [int(x) for x in data[1:1 + n]]
    print(count_ones(derived))


main()
