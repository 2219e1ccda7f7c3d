"""Built-in deterministic pixel mini-games.

Four games share an 84x84x3 RGB observation interface and integer-only
dynamics, so a (seed, action sequence) pair reproduces the exact same
trajectory on any platform:

  brick            4 actions   paddle/ball/brick-wall, tiered brick rewards
  shooter6         6 actions   cannon vs a marching alien grid, +10 a kill
  shooter7         7 actions   respawning aliens that shoot back, +21 a kill
  shooter6_holdout 6 actions   diving enemies; same action map as shooter6

shooter6 and shooter6_holdout decode actions identically index-by-index,
which is what makes policies portable between them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAME_H = 84
FRAME_W = 84

DEFAULT_MAX_EPISODE_STEPS = 3000

# 0 noop, 1 fire, 2 left, 3 right, 4 left+fire, 5 right+fire (+ 6 up in shooter7)
SHOOTER_MOVES = {0: 0, 1: 0, 2: -1, 3: 1, 4: -1, 5: 1}
SHOOTER_FIRE = frozenset({1, 4, 5})


@dataclass(frozen=True)
class EnvSpec:
    name: str
    action_count: int
    max_episode_steps: int


@dataclass
class StepResult:
    frame: np.ndarray
    reward: float
    done: bool
    episode_steps: int


class Lcg:
    """32-bit linear congruential generator; keeps env dynamics integer-exact."""

    def __init__(self, seed: int):
        self.state = (seed ^ 0x5DEECE66D) & 0xFFFFFFFF

    def next(self, n: int) -> int:
        self.state = (1664525 * self.state + 1013904223) & 0xFFFFFFFF
        return (self.state >> 16) % n


def _rect(img, x, y, w, h, color):
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, FRAME_W), min(y + h, FRAME_H)
    if x0 < x1 and y0 < y1:
        img[y0:y1, x0:x1] = color


def _overlap(ax, ay, aw, ah, bx, by, bw, bh) -> bool:
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


class PixelEnv:
    """Common stepping/rendering contract for the mini-games."""

    name = "base"
    action_count = 2

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS):
        self.spec = EnvSpec(self.name, self.action_count, max_episode_steps)
        self._episode_steps = 0
        self._done = True
        self._needs_reset = True

    def action_space(self) -> int:
        return self.spec.action_count

    @property
    def episode_steps(self) -> int:
        return self._episode_steps

    def reset(self, seed: int) -> np.ndarray:
        self._rng = Lcg(seed)
        self._episode_steps = 0
        self._done = False
        self._needs_reset = False
        self._init_state()
        return self.render()

    def step(self, action: int) -> StepResult:
        if self._needs_reset:
            raise RuntimeError(f"{self.name}: step() before reset()")
        if self._done:
            raise RuntimeError(f"{self.name}: step() after episode end")
        if not 0 <= action < self.spec.action_count:
            raise ValueError(
                f"{self.name}: action {action} out of range 0..{self.spec.action_count - 1}"
            )
        reward = self._tick(action)
        self._episode_steps += 1
        if self._episode_steps >= self.spec.max_episode_steps:
            self._done = True
        return StepResult(self.render(), float(reward), self._done, self._episode_steps)

    def render(self) -> np.ndarray:
        img = np.zeros((FRAME_H, FRAME_W, 3), dtype=np.uint8)
        self._draw(img)
        return img

    # subclass hooks
    def _init_state(self):
        raise NotImplementedError

    def _tick(self, action: int) -> int:
        raise NotImplementedError

    def _draw(self, img):
        raise NotImplementedError


class BrickEnv(PixelEnv):
    """Paddle/ball/brick-wall. Actions: 0 noop, 1 launch, 2 left, 3 right.

    72 bricks in 6 rows; the top two rows pay 7, the middle two 4, the
    bottom two 1. Three lost balls end the episode.
    """

    name = "brick"
    action_count = 4

    BRICK_ROWS = 6
    BRICK_COLS = 12
    BRICK_W = 7
    BRICK_H = 3
    BRICK_TOP = 12
    PADDLE_W = 14
    PADDLE_Y = 78
    ROW_POINTS = (7, 7, 4, 4, 1, 1)

    def _init_state(self):
        self.bricks = [[True] * self.BRICK_COLS for _ in range(self.BRICK_ROWS)]
        self.paddle_x = 14 + self._rng.next(43)
        self.lives = 3
        self.attached = True
        self.ball_x = 0
        self.ball_y = 0
        self.ball_dx = 0
        self.ball_dy = 0
        self._place_ball_on_paddle()

    def _place_ball_on_paddle(self):
        self.attached = True
        self.ball_x = self.paddle_x + self.PADDLE_W // 2 - 1
        self.ball_y = self.PADDLE_Y - 2

    def _tick(self, action: int) -> int:
        if action == 2:
            self.paddle_x = max(0, self.paddle_x - 3)
        elif action == 3:
            self.paddle_x = min(FRAME_W - self.PADDLE_W, self.paddle_x + 3)

        if self.attached:
            self._place_ball_on_paddle()
            if action == 1:
                self.attached = False
                self.ball_dy = -2
                self.ball_dx = (-2, -1, 1, 2)[self._rng.next(4)]
            return 0

        reward = 0
        nx = self.ball_x + self.ball_dx
        ny = self.ball_y + self.ball_dy
        if nx < 0:
            nx = -nx
            self.ball_dx = -self.ball_dx
        elif nx > FRAME_W - 2:
            nx = 2 * (FRAME_W - 2) - nx
            self.ball_dx = -self.ball_dx
        if ny < 0:
            ny = -ny
            self.ball_dy = -self.ball_dy

        hit = self._hit_brick(nx, ny)
        if hit is not None:
            row, col = hit
            self.bricks[row][col] = False
            reward = self.ROW_POINTS[row]
            self.ball_dy = -self.ball_dy
            ny = self.ball_y  # bounce back, keep x motion

        if self.ball_dy > 0 and ny + 2 >= self.PADDLE_Y and self.ball_y + 2 <= self.PADDLE_Y:
            if self.paddle_x - 1 <= nx <= self.paddle_x + self.PADDLE_W - 1:
                offset = nx + 1 - (self.paddle_x + self.PADDLE_W // 2)
                self.ball_dy = -2
                if offset < -3:
                    self.ball_dx = -2
                elif offset < 0:
                    self.ball_dx = -1
                elif offset <= 3:
                    self.ball_dx = 1
                else:
                    self.ball_dx = 2
                ny = self.PADDLE_Y - 2

        if ny > FRAME_H - 2:
            self.lives -= 1
            if self.lives <= 0:
                self._done = True
            else:
                self._place_ball_on_paddle()
            return reward

        self.ball_x, self.ball_y = nx, ny
        if not any(any(row) for row in self.bricks):
            self._done = True
        return reward

    def _hit_brick(self, nx, ny):
        top = self.BRICK_TOP
        bottom = top + self.BRICK_ROWS * self.BRICK_H
        if ny + 2 <= top or ny >= bottom:
            return None
        for row in range(self.BRICK_ROWS):
            by = top + row * self.BRICK_H
            if ny + 2 <= by or ny >= by + self.BRICK_H:
                continue
            for col in range(self.BRICK_COLS):
                if not self.bricks[row][col]:
                    continue
                bx = col * self.BRICK_W
                if nx + 2 > bx and nx < bx + self.BRICK_W:
                    return row, col
        return None

    def _draw(self, img):
        tier_colors = ((200, 60, 60), (200, 60, 60), (220, 150, 40),
                       (220, 150, 40), (200, 200, 70), (200, 200, 70))
        for row in range(self.BRICK_ROWS):
            for col in range(self.BRICK_COLS):
                if self.bricks[row][col]:
                    _rect(img, col * self.BRICK_W, self.BRICK_TOP + row * self.BRICK_H,
                          self.BRICK_W - 1, self.BRICK_H - 1, tier_colors[row])
        _rect(img, self.paddle_x, self.PADDLE_Y, self.PADDLE_W, 3, (80, 140, 255))
        _rect(img, self.ball_x, self.ball_y, 2, 2, (255, 255, 255))


class _CannonMixin:
    """Shared cannon/bullet plumbing for the shooter family."""

    CANNON_W = 8
    CANNON_H = 4
    CANNON_Y = 76
    BULLET_SPEED = 6

    def _init_cannon(self):
        self.cannon_x = 10 + self._rng.next(FRAME_W - self.CANNON_W - 20)
        self.cannon_y = self.CANNON_Y
        self.bullet = None  # (x, y) or None

    def _move_cannon(self, dx: int):
        self.cannon_x = max(0, min(FRAME_W - self.CANNON_W, self.cannon_x + 3 * dx))

    def _maybe_fire(self):
        if self.bullet is None:
            self.bullet = [self.cannon_x + self.CANNON_W // 2, self.cannon_y - 4]

    def _advance_bullet(self):
        if self.bullet is not None:
            self.bullet[1] -= self.BULLET_SPEED
            if self.bullet[1] < -4:
                self.bullet = None

    def _bullet_hits(self, x, y, w, h) -> bool:
        return self.bullet is not None and _overlap(
            self.bullet[0], self.bullet[1], 2, 4, x, y, w, h
        )

    def _draw_cannon(self, img):
        _rect(img, self.cannon_x, self.cannon_y, self.CANNON_W, self.CANNON_H,
              (60, 220, 60))
        if self.bullet is not None:
            _rect(img, self.bullet[0], self.bullet[1], 2, 4, (255, 255, 160))


class Shooter6Env(_CannonMixin, PixelEnv):
    """Cannon vs a marching alien grid, +10 per alien.

    Ends when the grid is cleared, an alien reaches the cannon row, or the
    step limit hits.
    """

    name = "shooter6"
    action_count = 6

    ALIEN_W = 6
    ALIEN_H = 4
    COL_PITCH = 10
    ROW_PITCH = 7
    KILL_POINTS = 10

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS,
                 rows: int = 3, cols: int = 5):
        super().__init__(max_episode_steps)
        self.rows = rows
        self.cols = cols

    def _init_state(self):
        self._init_cannon()
        self.grid_x = 4 + self._rng.next(16)
        self.grid_y = 8
        self.march_dir = 1 if self._rng.next(2) else -1
        self.alive = [[True] * self.cols for _ in range(self.rows)]

    def _alien_pos(self, row, col):
        return self.grid_x + col * self.COL_PITCH, self.grid_y + row * self.ROW_PITCH

    def alive_aliens(self):
        return [
            (r, c, *self._alien_pos(r, c))
            for r in range(self.rows)
            for c in range(self.cols)
            if self.alive[r][c]
        ]

    def _tick(self, action: int) -> int:
        self._move_cannon(SHOOTER_MOVES[action])
        if action in SHOOTER_FIRE:
            self._maybe_fire()
        self._advance_bullet()

        reward = 0
        for r, c, ax, ay in self.alive_aliens():
            if self._bullet_hits(ax, ay, self.ALIEN_W, self.ALIEN_H):
                self.alive[r][c] = False
                self.bullet = None
                reward += self.KILL_POINTS
                break

        live = self.alive_aliens()
        if not live:
            self._done = True
            return reward

        xs = [ax for _, _, ax, _ in live]
        lo, hi = min(xs), max(xs) + self.ALIEN_W
        if (self.march_dir > 0 and hi >= FRAME_W - 1) or (self.march_dir < 0 and lo <= 1):
            self.march_dir = -self.march_dir
            self.grid_y += 2
        else:
            self.grid_x += self.march_dir

        for _, _, ax, ay in self.alive_aliens():
            if ay + self.ALIEN_H >= self.cannon_y:
                self._done = True  # landed / reached the cannon
                break
        return reward

    def _draw(self, img):
        for _, _, ax, ay in self.alive_aliens():
            _rect(img, ax, ay, self.ALIEN_W, self.ALIEN_H, (220, 60, 220))
        self._draw_cannon(img)


class Shooter7Env(_CannonMixin, PixelEnv):
    """Respawning aliens that drop bombs; the cannon can also climb.

    Actions 0..5 as in shooter6 plus 6 = up. +21 per kill; a bomb or alien
    touching the cannon ends the episode.
    """

    name = "shooter7"
    action_count = 7

    ALIEN_W = 6
    ALIEN_H = 4
    COL_PITCH = 10
    ROW_PITCH = 7
    KILL_POINTS = 21
    RESPAWN_TICKS = 24
    BOMB_INTERVAL = 17
    BOMB_SPEED = 2
    CANNON_MIN_Y = 64

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS,
                 rows: int = 2, cols: int = 5):
        super().__init__(max_episode_steps)
        self.rows = rows
        self.cols = cols

    def _init_state(self):
        self._init_cannon()
        self.grid_x = 4 + self._rng.next(16)
        self.grid_y = 8
        self.march_dir = 1 if self._rng.next(2) else -1
        self.respawn_at = [[0] * self.cols for _ in range(self.rows)]  # 0 = alive
        self.bombs: list[list[int]] = []
        self.tick_count = 0

    def _alien_pos(self, row, col):
        return self.grid_x + col * self.COL_PITCH, self.grid_y + row * self.ROW_PITCH

    def alive_aliens(self):
        return [
            (r, c, *self._alien_pos(r, c))
            for r in range(self.rows)
            for c in range(self.cols)
            if self.respawn_at[r][c] == 0
        ]

    def _tick(self, action: int) -> int:
        self.tick_count += 1
        self._move_cannon(SHOOTER_MOVES.get(action, 0))
        if action == 6:
            self.cannon_y = max(self.CANNON_MIN_Y, self.cannon_y - 3)
        else:
            self.cannon_y = min(self.CANNON_Y, self.cannon_y + 1)
        if action in SHOOTER_FIRE:
            self._maybe_fire()
        self._advance_bullet()

        reward = 0
        for r, c, ax, ay in self.alive_aliens():
            if self._bullet_hits(ax, ay, self.ALIEN_W, self.ALIEN_H):
                self.respawn_at[r][c] = self.tick_count + self.RESPAWN_TICKS
                self.bullet = None
                reward += self.KILL_POINTS
                break
        for r in range(self.rows):
            for c in range(self.cols):
                if self.respawn_at[r][c] and self.respawn_at[r][c] <= self.tick_count:
                    self.respawn_at[r][c] = 0

        live = self.alive_aliens()
        if live:
            xs = [ax for _, _, ax, _ in live]
            lo, hi = min(xs), max(xs) + self.ALIEN_W
            if (self.march_dir > 0 and hi >= FRAME_W - 1) or (self.march_dir < 0 and lo <= 1):
                self.march_dir = -self.march_dir
                self.grid_y += 2
            else:
                self.grid_x += self.march_dir
            if self.tick_count % self.BOMB_INTERVAL == 0:
                r, c, ax, ay = live[self._rng.next(len(live))]
                self.bombs.append([ax + self.ALIEN_W // 2, ay + self.ALIEN_H])

        for bomb in self.bombs:
            bomb[1] += self.BOMB_SPEED
        self.bombs = [b for b in self.bombs if b[1] < FRAME_H]

        for bx, by in self.bombs:
            if _overlap(bx, by, 1, 3, self.cannon_x, self.cannon_y,
                        self.CANNON_W, self.CANNON_H):
                self._done = True
                return reward
        for _, _, ax, ay in self.alive_aliens():
            if _overlap(ax, ay, self.ALIEN_W, self.ALIEN_H, self.cannon_x,
                        self.cannon_y, self.CANNON_W, self.CANNON_H):
                self._done = True
                return reward
        return reward

    def _draw(self, img):
        for _, _, ax, ay in self.alive_aliens():
            _rect(img, ax, ay, self.ALIEN_W, self.ALIEN_H, (230, 120, 30))
        for bx, by in self.bombs:
            _rect(img, bx, by, 1, 3, (255, 80, 80))
        self._draw_cannon(img)


class Shooter6HoldoutEnv(_CannonMixin, PixelEnv):
    """Diving enemies, same six actions as shooter6 index-by-index.

    Enemies zigzag downward; a killed or escaped diver respawns at the top,
    and a diver touching the cannon ends the episode. Never used for
    training in the multi-game experiment.
    """

    name = "shooter6_holdout"
    action_count = 6

    ENEMY_W = 6
    ENEMY_H = 4
    KILL_POINTS = 10

    def __init__(self, max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS,
                 divers: int = 4):
        super().__init__(max_episode_steps)
        self.n_divers = divers

    def _init_state(self):
        self._init_cannon()
        self.tick_count = 0
        self.divers = [self._spawn(i) for i in range(self.n_divers)]

    def _spawn(self, index: int):
        x = self._rng.next(FRAME_W - self.ENEMY_W)
        phase = self._rng.next(16)
        return [x, 6 + (index % 3) * 6, phase]

    def _tick(self, action: int) -> int:
        self.tick_count += 1
        self._move_cannon(SHOOTER_MOVES[action])
        if action in SHOOTER_FIRE:
            self._maybe_fire()
        self._advance_bullet()

        reward = 0
        for i, (dx_, dy_, phase) in enumerate(list(self.divers)):
            if self._bullet_hits(dx_, dy_, self.ENEMY_W, self.ENEMY_H):
                reward += self.KILL_POINTS
                self.bullet = None
                self.divers[i] = self._spawn(i)
                break

        for diver in self.divers:
            if (self.tick_count + diver[2]) % 2 == 0:
                diver[1] += 1
            zig = 1 if ((self.tick_count + diver[2]) // 8) % 2 == 0 else -1
            diver[0] = max(0, min(FRAME_W - self.ENEMY_W, diver[0] + zig))

        for i, diver in enumerate(self.divers):
            if _overlap(diver[0], diver[1], self.ENEMY_W, self.ENEMY_H,
                        self.cannon_x, self.cannon_y, self.CANNON_W, self.CANNON_H):
                self._done = True
                return reward
            if diver[1] > FRAME_H - 4:
                self.divers[i] = self._spawn(i)
        return reward

    def _draw(self, img):
        for dx_, dy_, _ in self.divers:
            _rect(img, dx_, dy_, self.ENEMY_W, self.ENEMY_H, (60, 200, 220))
        self._draw_cannon(img)


ENV_CATALOG = {
    BrickEnv.name: BrickEnv,
    Shooter6Env.name: Shooter6Env,
    Shooter7Env.name: Shooter7Env,
    Shooter6HoldoutEnv.name: Shooter6HoldoutEnv,
}


def make_env(name: str, **kwargs) -> PixelEnv:
    if name not in ENV_CATALOG:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENV_CATALOG)}")
    return ENV_CATALOG[name](**kwargs)
